#pragma once

// Ranking metrics for detector and fusion scores.

#include <ostream>
#include <span>
#include <vector>

#include "noisepair/detector.hpp"
#include "noisepair/fusion.hpp"
#include "noisepair/labels.hpp"

namespace noisepair {

struct ScoredSample {
  double score = 0.0;
  bool truth = false;
};

// How equal scores are ranked. `stable` keeps input order; `pessimistic`
// ranks negatives ahead of positives.
enum class TieOrder { stable, pessimistic };

// Rank-based (non-interpolated) average precision.
double average_precision(std::span<const ScoredSample> samples, TieOrder ties = TieOrder::stable);

double f1_score(double precision, double recall);

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct PrCurve {
  std::vector<PrPoint> points;  // ascending threshold
  double ap = 0.0;
  double optimal_f1 = 0.0;
  double optimal_threshold = 0.0;
};

// Sweeps every distinct score as a threshold (predicted positive iff
// score >= threshold).
PrCurve pr_curve(std::span<const ScoredSample> samples, TieOrder ties = TieOrder::stable);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

// Precision is 1 when nothing is predicted positive.
PrecisionRecall precision_recall_at(std::span<const ScoredSample> samples, double threshold);

// Highest recall among curve points with precision >= min_precision (0 if none).
double recall_at_precision(const PrCurve& curve, double min_precision);

// A fusion window is positive iff a source-originated event heard clearly at
// the receiver overlaps it on the wall clock (the source clock). Where the
// receiver copy falls on the drifted receiver clock does not matter.
std::vector<ScoredSample> evaluate_verdicts(const std::vector<FusionVerdict>& verdicts,
                                            const std::vector<TruthEvent>& truth,
                                            double window_s = 26.0);

// One sample per prediction: positive iff its window overlaps a clear event.
std::vector<ScoredSample> detector_samples(const PredictionSeries& series,
                                           const std::vector<EventLabel>& events,
                                           double window_s = 1.0);

// Receiver-only baseline: the maximum receiver prediction inside each
// verdict's window, paired with the same truth as evaluate_verdicts.
std::vector<ScoredSample> receiver_only_samples(const PredictionSeries& receiver,
                                                const std::vector<FusionVerdict>& verdicts,
                                                const std::vector<TruthEvent>& truth,
                                                double window_s = 26.0);

void write_pr_csv(const PrCurve& curve, std::ostream& out);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // population std over seeds
};
MeanStd mean_std(std::span<const double> values);

}  // namespace noisepair
