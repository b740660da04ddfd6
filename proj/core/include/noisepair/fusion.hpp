#pragma once

// Origin decision for paired source/receiver prediction series.
//
// Per fusion window:
//   1. max(source) <= threshold_source            -> score 0
//   2. else max(receiver) > threshold_receiver    -> score = max(receiver)
//   3. else                                       -> lag-bounded max normalised
//                                                    cross-correlation

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "noisepair/detector.hpp"

namespace noisepair {

struct FusionConfig {
  double window_s = 26.0;
  double window_hop_s = 13.0;
  double threshold_source = 0.8;
  double threshold_receiver = 0.6;
  double max_drift_s = 10.0;
  // Alternative: score = max(receiver max, xcorr) in the fallback branch.
  bool max_aggregate_fallback = false;

  void validate() const;
  // round(max_drift_s / step_s)
  int max_lag_steps(double step_s) const;
};

enum class FusionBranch { no_source_activity, receiver_confident, cross_correlation };

const char* to_string(FusionBranch b);
FusionBranch fusion_branch_from_string(const std::string& s);

struct FusionVerdict {
  double window_start_s = 0.0;
  double score = 0.0;
  FusionBranch branch = FusionBranch::no_source_activity;
  std::optional<double> best_lag_s;
};

struct XcorrResult {
  double value = 0.0;
  int best_lag = 0;  // in steps; b is shifted by +lag relative to a
};

// max over |lag| <= max_lag of sum_t a[t] * b[t + lag] / (|a| |b|), norms over
// the full windows. Ties prefer smaller |lag|, then the negative lag. An
// all-zero window gives {0, 0}.
XcorrResult xcorr_max(std::span<const double> a, std::span<const double> b, int max_lag);

FusionVerdict fuse_window(const PredictionSeries& src, const PredictionSeries& rcv,
                          const FusionConfig& cfg);

// Windows tiled at window_hop_s from the source series start; each device's
// samples are placed on the window grid by their own timestamps.
std::vector<FusionVerdict> fuse_stream(const PredictionSeries& src, const PredictionSeries& rcv,
                                       const FusionConfig& cfg);

struct BundleSpec {
  std::string name;
  int receiver_order = 0;
  int source_order = 3;
};

BundleSpec bundle(int receiver_stack_order, int source_stack_order);
BundleSpec bundled_one();
BundleSpec bundled_two();
// "one", "two" or "custom" (custom requires explicit orders).
BundleSpec bundle_by_name(const std::string& name, int receiver_order = -1,
                          int source_order = -1);

}  // namespace noisepair
