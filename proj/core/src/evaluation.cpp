#include "noisepair/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "noisepair/error.hpp"

namespace noisepair {

namespace {

std::vector<std::size_t> ranking(std::span<const ScoredSample> samples, TieOrder ties) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (samples[a].score != samples[b].score) return samples[a].score > samples[b].score;
    if (ties == TieOrder::pessimistic) return !samples[a].truth && samples[b].truth;
    return false;
  });
  return order;
}

std::size_t count_positives(std::span<const ScoredSample> samples) {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [](const auto& s) { return s.truth; }));
}

}  // namespace

double average_precision(std::span<const ScoredSample> samples, TieOrder ties) {
  for (const auto& s : samples) {
    if (!std::isfinite(s.score)) throw Error("non-finite score");
  }
  const std::size_t positives = count_positives(samples);
  if (positives == 0) throw Error("AP undefined");
  double sum = 0.0;
  std::size_t tp = 0;
  const auto order = ranking(samples, ties);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (!samples[order[rank]].truth) continue;
    ++tp;
    sum += static_cast<double>(tp) / static_cast<double>(rank + 1);
  }
  return sum / static_cast<double>(positives);
}

double f1_score(double precision, double recall) {
  if (precision <= 0.0 || recall <= 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

PrCurve pr_curve(std::span<const ScoredSample> samples, TieOrder ties) {
  const std::size_t positives = count_positives(samples);
  if (positives == 0 || positives == samples.size()) throw Error("curve undefined");
  PrCurve curve;
  curve.ap = average_precision(samples, ties);

  const auto order = ranking(samples, ties);
  std::size_t tp = 0, fp = 0;
  std::vector<PrPoint> descending;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& s = samples[order[i]];
    (s.truth ? tp : fp) += 1;
    const bool group_end = i + 1 == order.size() || samples[order[i + 1]].score != s.score;
    if (!group_end) continue;
    PrPoint p;
    p.threshold = s.score;
    p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    p.recall = static_cast<double>(tp) / static_cast<double>(positives);
    p.f1 = f1_score(p.precision, p.recall);
    descending.push_back(p);
  }
  curve.points.assign(descending.rbegin(), descending.rend());
  for (const auto& p : curve.points) {
    // Ascending thresholds; ">" keeps the lowest threshold reaching the optimum.
    if (p.f1 > curve.optimal_f1) {
      curve.optimal_f1 = p.f1;
      curve.optimal_threshold = p.threshold;
    }
  }
  return curve;
}

PrecisionRecall precision_recall_at(std::span<const ScoredSample> samples, double threshold) {
  const std::size_t positives = count_positives(samples);
  std::size_t tp = 0, fp = 0;
  for (const auto& s : samples) {
    if (s.score >= threshold) (s.truth ? tp : fp) += 1;
  }
  PrecisionRecall pr;
  pr.precision = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  pr.recall = positives == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(positives);
  return pr;
}

double recall_at_precision(const PrCurve& curve, double min_precision) {
  double best = 0.0;
  for (const auto& p : curve.points) {
    if (p.precision >= min_precision) best = std::max(best, p.recall);
  }
  return best;
}

std::vector<ScoredSample> evaluate_verdicts(const std::vector<FusionVerdict>& verdicts,
                                            const std::vector<TruthEvent>& truth,
                                            double window_s) {
  std::vector<ScoredSample> out;
  out.reserve(verdicts.size());
  for (const auto& v : verdicts) {
    const double a = v.window_start_s;
    const double b = a + window_s;
    const bool positive = std::any_of(truth.begin(), truth.end(), [&](const TruthEvent& e) {
      return e.heard_source_event() && e.label.overlaps(a, b);
    });
    out.push_back({v.score, positive});
  }
  return out;
}

std::vector<ScoredSample> detector_samples(const PredictionSeries& series,
                                           const std::vector<EventLabel>& events,
                                           double window_s) {
  std::vector<ScoredSample> out;
  out.reserve(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double a = series.times[i];
    const bool positive = std::any_of(events.begin(), events.end(), [&](const EventLabel& e) {
      return e.binary() && e.overlaps(a, a + window_s);
    });
    out.push_back({series.probs[i], positive});
  }
  return out;
}

std::vector<ScoredSample> receiver_only_samples(const PredictionSeries& receiver,
                                                const std::vector<FusionVerdict>& verdicts,
                                                const std::vector<TruthEvent>& truth,
                                                double window_s) {
  auto out = evaluate_verdicts(verdicts, truth, window_s);
  for (std::size_t k = 0; k < verdicts.size(); ++k) {
    const double a = verdicts[k].window_start_s;
    double best = 0.0;
    const auto first = std::lower_bound(receiver.times.begin(), receiver.times.end(), a - 1e-9);
    for (auto it = first; it != receiver.times.end() && *it < a + window_s - 1e-9; ++it) {
      best = std::max(best, receiver.probs[static_cast<std::size_t>(it - receiver.times.begin())]);
    }
    out[k].score = best;
  }
  return out;
}

void write_pr_csv(const PrCurve& curve, std::ostream& out) {
  out << "threshold,precision,recall,f1\n";
  out.precision(17);
  for (const auto& p : curve.points) {
    out << p.threshold << ',' << p.precision << ',' << p.recall << ',' << p.f1 << '\n';
  }
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd m;
  if (values.empty()) return m;
  for (const double v : values) m.mean += v;
  m.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (const double v : values) var += (v - m.mean) * (v - m.mean);
  m.stddev = std::sqrt(var / static_cast<double>(values.size()));
  return m;
}

}  // namespace noisepair
