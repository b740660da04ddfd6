#include "noisepair/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "noisepair/error.hpp"

namespace noisepair {

namespace {

constexpr double kStepTolerance = 1e-9;

double norm(std::span<const double> v) {
  double s = 0.0;
  for (const double x : v) s += x * x;
  return std::sqrt(s);
}

double max_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
}

// Samples of `series` whose timestamps fall in [start, start + n * step),
// placed by index floor((t - start) / step); missing positions are zero.
std::vector<double> window_values(const PredictionSeries& series, double start, std::size_t n) {
  std::vector<double> out(n, 0.0);
  const double end = start + static_cast<double>(n) * series.step_s;
  const auto first = std::lower_bound(series.times.begin(), series.times.end(),
                                      start - kStepTolerance);
  for (auto it = first; it != series.times.end() && *it < end - kStepTolerance; ++it) {
    const double pos = (*it - start) / series.step_s;
    const auto idx = static_cast<std::ptrdiff_t>(std::floor(pos + 1e-6));
    if (idx < 0 || static_cast<std::size_t>(idx) >= n) continue;
    out[static_cast<std::size_t>(idx)] =
        series.probs[static_cast<std::size_t>(it - series.times.begin())];
  }
  return out;
}

}  // namespace

void FusionConfig::validate() const {
  if (!(threshold_source > 0.0 && threshold_source < 1.0) ||
      !(threshold_receiver > 0.0 && threshold_receiver < 1.0)) {
    throw Error("invalid fusion config: thresholds must be in (0, 1)");
  }
  if (!(window_s > 0.0) || !(window_hop_s > 0.0)) {
    throw Error("invalid fusion config: window");
  }
  if (!(max_drift_s >= 0.0) || max_drift_s > window_s / 2.0) {
    throw Error("invalid fusion config: max_drift_s must be in [0, window_s / 2]");
  }
}

int FusionConfig::max_lag_steps(double step_s) const {
  return static_cast<int>(std::lround(max_drift_s / step_s));
}

const char* to_string(FusionBranch b) {
  switch (b) {
    case FusionBranch::no_source_activity: return "no_source_activity";
    case FusionBranch::receiver_confident: return "receiver_confident";
    case FusionBranch::cross_correlation: return "cross_correlation";
  }
  return "?";
}

FusionBranch fusion_branch_from_string(const std::string& s) {
  if (s == "no_source_activity") return FusionBranch::no_source_activity;
  if (s == "receiver_confident") return FusionBranch::receiver_confident;
  if (s == "cross_correlation") return FusionBranch::cross_correlation;
  throw Error("unknown fusion branch: " + s);
}

XcorrResult xcorr_max(std::span<const double> a, std::span<const double> b, int max_lag) {
  if (a.empty() || b.empty()) throw Error("empty prediction window");
  if (max_lag < 0) throw Error("negative lag bound");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) return {};

  const auto n_a = static_cast<std::ptrdiff_t>(a.size());
  const auto n_b = static_cast<std::ptrdiff_t>(b.size());
  XcorrResult best{-std::numeric_limits<double>::infinity(), 0};
  auto consider = [&](int lag) {
    double acc = 0.0;
    const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -lag);
    const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(n_a, n_b - lag);
    for (std::ptrdiff_t t = t0; t < t1; ++t) {
      acc += a[static_cast<std::size_t>(t)] * b[static_cast<std::size_t>(t + lag)];
    }
    const double value = acc / (na * nb);
    if (value > best.value) best = {value, lag};
  };
  // Tie-break order: 0, -1, +1, -2, +2, ...; only a strictly larger value wins.
  consider(0);
  for (int mag = 1; mag <= max_lag; ++mag) {
    consider(-mag);
    consider(mag);
  }
  best.value = std::clamp(best.value, 0.0, 1.0);
  return best;
}

FusionVerdict fuse_window(const PredictionSeries& src, const PredictionSeries& rcv,
                          const FusionConfig& cfg) {
  cfg.validate();
  if (std::abs(src.step_s - rcv.step_s) > kStepTolerance || !(src.step_s > 0.0)) {
    throw Error("incompatible prediction series");
  }
  FusionVerdict v;
  v.window_start_s = src.times.empty() ? 0.0 : src.times.front();
  const double src_max = max_of(src.probs);
  if (!(src_max > cfg.threshold_source)) {
    v.branch = FusionBranch::no_source_activity;
    v.score = 0.0;
    return v;
  }
  const double rcv_max = max_of(rcv.probs);
  if (rcv_max > cfg.threshold_receiver) {
    v.branch = FusionBranch::receiver_confident;
    v.score = rcv_max;
    return v;
  }
  const auto xc = xcorr_max(src.probs, rcv.probs, cfg.max_lag_steps(src.step_s));
  v.branch = FusionBranch::cross_correlation;
  v.score = cfg.max_aggregate_fallback ? std::max(xc.value, rcv_max) : xc.value;
  v.best_lag_s = static_cast<double>(xc.best_lag) * src.step_s;
  return v;
}

std::vector<FusionVerdict> fuse_stream(const PredictionSeries& src, const PredictionSeries& rcv,
                                       const FusionConfig& cfg) {
  cfg.validate();
  if (src.times.empty() || rcv.times.empty()) throw Error("no predictions");
  if (std::abs(src.step_s - rcv.step_s) > kStepTolerance || !(src.step_s > 0.0)) {
    throw Error("incompatible prediction series");
  }
  const double step = src.step_s;
  const auto n = static_cast<std::size_t>(std::floor(cfg.window_s / step + 1e-9));
  const double origin = src.times.front();
  const double span_end = src.times.back() + step;

  std::size_t count = 1;
  if (span_end - origin > cfg.window_s) {
    count = static_cast<std::size_t>(
                std::floor((span_end - origin - cfg.window_s) / cfg.window_hop_s + 1e-9)) +
            1;
  }

  std::vector<FusionVerdict> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double start = origin + static_cast<double>(k) * cfg.window_hop_s;
    PredictionSeries sw, rw;
    sw.device_id = src.device_id;
    rw.device_id = rcv.device_id;
    sw.step_s = rw.step_s = step;
    sw.probs = window_values(src, start, n);
    rw.probs = window_values(rcv, start, n);
    for (std::size_t i = 0; i < n; ++i) {
      sw.times.push_back(start + static_cast<double>(i) * step);
    }
    rw.times = sw.times;
    FusionVerdict v = fuse_window(sw, rw, cfg);
    v.window_start_s = start;
    out.push_back(v);
  }
  return out;
}

BundleSpec bundle(int receiver_stack_order, int source_stack_order) {
  if (receiver_stack_order < 0 || receiver_stack_order > 3 || source_stack_order < 0 ||
      source_stack_order > 3) {
    throw Error("unsupported stack order");
  }
  BundleSpec b{"custom", receiver_stack_order, source_stack_order};
  if (receiver_stack_order == 0 && source_stack_order == 3) b.name = "one";
  if (receiver_stack_order == 1 && source_stack_order == 3) b.name = "two";
  return b;
}

BundleSpec bundled_one() { return bundle(0, 3); }
BundleSpec bundled_two() { return bundle(1, 3); }

BundleSpec bundle_by_name(const std::string& name, int receiver_order, int source_order) {
  if (name == "one") return bundled_one();
  if (name == "two") return bundled_two();
  if (name == "custom") {
    BundleSpec b = bundle(receiver_order, source_order);
    b.name = "custom";
    return b;
  }
  throw Error("unknown bundle: " + name);
}

}  // namespace noisepair
