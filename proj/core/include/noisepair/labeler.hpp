#pragma once

// Unsupervised two-state Gaussian HMM over per-frame sound levels. The
// louder state marks candidate noise events.

#include <array>
#include <cstdint>
#include <vector>

#include "noisepair/frontend.hpp"
#include "noisepair/labels.hpp"

namespace noisepair {

struct Hmm2 {
  std::array<double, 2> initial{0.5, 0.5};
  std::array<std::array<double, 2>, 2> transition{{{0.9, 0.1}, {0.1, 0.9}}};
  std::array<double, 2> mean{0.0, 0.0};
  std::array<double, 2> stddev{1.0, 1.0};

  // Throws when the probability rows do not sum to one or a std is not positive.
  void validate() const;
  double log_emission(int state, double x) const;
};

inline constexpr double kHmmStdFloorDb = 0.5;

struct HmmFit {
  Hmm2 hmm;
  double log_likelihood = 0.0;
  // Log-likelihood of the parameters at every E-step, in order.
  std::vector<double> history;
  int iterations = 0;
};

// Baum-Welch. State 1 of the returned model is the higher-mean (event) state.
HmmFit fit(const LevelSeries& levels, double tol = 1e-6, int max_iter = 200,
           std::uint64_t seed = 1);

double log_likelihood(const Hmm2& hmm, const std::vector<double>& values);

// Most probable state path (Viterbi, log domain). Ties go to the lower state.
std::vector<int> decode(const Hmm2& hmm, const LevelSeries& levels);

// Log joint probability of a state path and the observations.
double path_log_probability(const Hmm2& hmm, const std::vector<double>& values,
                            const std::vector<int>& states);

// Maximal runs of `event_state` as [start, end) spans; audibility is unset.
std::vector<EventLabel> segments(const std::vector<int>& states, double frame_period_s,
                                 double start_time_s = 0.0, int event_state = 1);

}  // namespace noisepair
