#include "noisepair/labeler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "noisepair/error.hpp"

namespace noisepair {

namespace {

constexpr double kLogSqrtTwoPi = 0.91893853320467274178;  // 0.5 * log(2 pi)

double percentile(std::vector<double> sorted_values, double q) {
  std::sort(sorted_values.begin(), sorted_values.end());
  const double pos = q * static_cast<double>(sorted_values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted_values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted_values[lo] * (1.0 - frac) + sorted_values[hi] * frac;
}

double safe_log(double p) {
  return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
}

// Scaled forward-backward. Returns log-likelihood; fills posteriors and
// expected transition counts.
double forward_backward(const Hmm2& hmm, const std::vector<double>& x,
                        std::vector<std::array<double, 2>>* gamma,
                        std::array<std::array<double, 2>, 2>* xi_sum) {
  const std::size_t n = x.size();
  std::vector<std::array<double, 2>> alpha(n), beta(n), emit(n);
  std::vector<double> scale(n);
  double ll = 0.0;

  for (std::size_t t = 0; t < n; ++t) {
    const double l0 = hmm.log_emission(0, x[t]);
    const double l1 = hmm.log_emission(1, x[t]);
    const double m = std::max(l0, l1);
    emit[t] = {std::exp(l0 - m), std::exp(l1 - m)};
    ll += m;
  }

  for (int j = 0; j < 2; ++j) alpha[0][j] = hmm.initial[j] * emit[0][j];
  for (std::size_t t = 0;; ++t) {
    if (t > 0) {
      for (int j = 0; j < 2; ++j) {
        alpha[t][j] = (alpha[t - 1][0] * hmm.transition[0][j] +
                       alpha[t - 1][1] * hmm.transition[1][j]) *
                      emit[t][j];
      }
    }
    scale[t] = alpha[t][0] + alpha[t][1];
    if (!(scale[t] > 0.0)) throw Error("degenerate level series");
    alpha[t][0] /= scale[t];
    alpha[t][1] /= scale[t];
    ll += std::log(scale[t]);
    if (t + 1 == n) break;
  }

  if (!gamma && !xi_sum) return ll;

  beta[n - 1] = {1.0, 1.0};
  for (std::size_t t = n - 1; t-- > 0;) {
    for (int i = 0; i < 2; ++i) {
      beta[t][i] = (hmm.transition[i][0] * emit[t + 1][0] * beta[t + 1][0] +
                    hmm.transition[i][1] * emit[t + 1][1] * beta[t + 1][1]) /
                   scale[t + 1];
    }
  }
  if (gamma) {
    gamma->resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      const double g0 = alpha[t][0] * beta[t][0];
      const double g1 = alpha[t][1] * beta[t][1];
      const double s = g0 + g1;
      (*gamma)[t] = {g0 / s, g1 / s};
    }
  }
  if (xi_sum) {
    *xi_sum = {{{0.0, 0.0}, {0.0, 0.0}}};
    for (std::size_t t = 0; t + 1 < n; ++t) {
      for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
          (*xi_sum)[i][j] += alpha[t][i] * hmm.transition[i][j] * emit[t + 1][j] *
                             beta[t + 1][j] / scale[t + 1];
        }
      }
    }
  }
  return ll;
}

void swap_states(Hmm2& h) {
  std::swap(h.initial[0], h.initial[1]);
  std::swap(h.mean[0], h.mean[1]);
  std::swap(h.stddev[0], h.stddev[1]);
  const auto a = h.transition;
  h.transition = {{{a[1][1], a[1][0]}, {a[0][1], a[0][0]}}};
}

}  // namespace

void Hmm2::validate() const {
  constexpr double tol = 1e-9;
  if (std::abs(initial[0] + initial[1] - 1.0) > tol) throw Error("invalid hmm: initial");
  for (const auto& row : transition) {
    if (std::abs(row[0] + row[1] - 1.0) > tol || row[0] < 0.0 || row[1] < 0.0) {
      throw Error("invalid hmm: transition");
    }
  }
  if (!(stddev[0] > 0.0) || !(stddev[1] > 0.0)) throw Error("invalid hmm: stddev");
}

double Hmm2::log_emission(int state, double x) const {
  const auto s = static_cast<std::size_t>(state);
  const double z = (x - mean[s]) / stddev[s];
  return -kLogSqrtTwoPi - std::log(stddev[s]) - 0.5 * z * z;
}

double log_likelihood(const Hmm2& hmm, const std::vector<double>& values) {
  if (values.empty()) throw Error("empty level series");
  return forward_backward(hmm, values, nullptr, nullptr);
}

HmmFit fit(const LevelSeries& levels, double tol, int max_iter, std::uint64_t seed) {
  const auto& x = levels.values;
  if (x.size() < 4) throw Error("too few frames for hmm");
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  if (!(*hi_it - *lo_it > 1e-12)) throw Error("degenerate level series");

  double mean = 0.0;
  for (const double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (const double v : x) var += (v - mean) * (v - mean);
  const double sd = std::max(std::sqrt(var / static_cast<double>(x.size())), kHmmStdFloorDb);

  Hmm2 h;
  double low = percentile(x, 0.10);
  double high = percentile(x, 0.90);
  if (!(high > low)) {
    low = *lo_it;
    high = *hi_it;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, 0.01 * sd);
  h.mean = {low + jitter(rng), high + jitter(rng)};
  h.stddev = {sd, sd};
  h.initial = {0.5, 0.5};
  h.transition = {{{0.9, 0.1}, {0.1, 0.9}}};

  HmmFit result;
  std::vector<std::array<double, 2>> gamma;
  std::array<std::array<double, 2>, 2> xi{};
  for (int iter = 0;; ++iter) {
    const double ll = forward_backward(h, x, &gamma, &xi);
    result.history.push_back(ll);
    const bool converged = iter > 0 && ll - result.history[result.history.size() - 2] < tol;
    if (converged || iter >= max_iter) {
      result.log_likelihood = ll;
      result.iterations = iter;
      break;
    }

    // M-step.
    h.initial = gamma[0];
    for (int i = 0; i < 2; ++i) {
      const double row = xi[i][0] + xi[i][1];
      if (row > 0.0) {
        h.transition[i][0] = xi[i][0] / row;
        h.transition[i][1] = xi[i][1] / row;
      }
      double w = 0.0, sx = 0.0;
      for (std::size_t t = 0; t < x.size(); ++t) {
        w += gamma[t][i];
        sx += gamma[t][i] * x[t];
      }
      if (w <= 0.0) continue;
      const double mu = sx / w;
      double sxx = 0.0;
      for (std::size_t t = 0; t < x.size(); ++t) sxx += gamma[t][i] * (x[t] - mu) * (x[t] - mu);
      h.mean[i] = mu;
      h.stddev[i] = std::max(std::sqrt(sxx / w), kHmmStdFloorDb);
    }
  }
  if (h.mean[0] > h.mean[1]) swap_states(h);
  result.hmm = h;
  return result;
}

std::vector<int> decode(const Hmm2& hmm, const LevelSeries& levels) {
  const auto& x = levels.values;
  if (x.empty()) return {};
  const std::size_t n = x.size();
  std::vector<std::array<int, 2>> back(n);
  std::array<double, 2> score{};
  for (int j = 0; j < 2; ++j) score[j] = safe_log(hmm.initial[j]) + hmm.log_emission(j, x[0]);
  const std::array<std::array<double, 2>, 2> la{
      {{safe_log(hmm.transition[0][0]), safe_log(hmm.transition[0][1])},
       {safe_log(hmm.transition[1][0]), safe_log(hmm.transition[1][1])}}};
  for (std::size_t t = 1; t < n; ++t) {
    std::array<double, 2> next{};
    for (int j = 0; j < 2; ++j) {
      const double from0 = score[0] + la[0][j];
      const double from1 = score[1] + la[1][j];
      back[t][j] = from1 > from0 ? 1 : 0;
      next[j] = std::max(from0, from1) + hmm.log_emission(j, x[t]);
    }
    score = next;
  }
  std::vector<int> path(n);
  path[n - 1] = score[1] > score[0] ? 1 : 0;
  for (std::size_t t = n - 1; t > 0; --t) path[t - 1] = back[t][path[t]];
  return path;
}

double path_log_probability(const Hmm2& hmm, const std::vector<double>& values,
                            const std::vector<int>& states) {
  if (values.size() != states.size() || values.empty()) throw Error("path length mismatch");
  double lp = safe_log(hmm.initial[states[0]]) + hmm.log_emission(states[0], values[0]);
  for (std::size_t t = 1; t < values.size(); ++t) {
    lp += safe_log(hmm.transition[states[t - 1]][states[t]]) +
          hmm.log_emission(states[t], values[t]);
  }
  return lp;
}

std::vector<EventLabel> segments(const std::vector<int>& states, double frame_period_s,
                                 double start_time_s, int event_state) {
  std::vector<EventLabel> out;
  std::size_t t = 0;
  while (t < states.size()) {
    if (states[t] != event_state) {
      ++t;
      continue;
    }
    const std::size_t begin = t;
    while (t < states.size() && states[t] == event_state) ++t;
    out.emplace_back(start_time_s + static_cast<double>(begin) * frame_period_s,
                     start_time_s + static_cast<double>(t) * frame_period_s);
  }
  return out;
}

}  // namespace noisepair
