#include "noisepair/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "noisepair/error.hpp"

namespace noisepair {

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 over the combined value
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller on the portable uniform draw.
class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : rng_(seed) {}
  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(rng_);
    while (u1 <= 0.0) u1 = uniform01(rng_);
    const double u2 = uniform01(rng_);
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * 3.14159265358979323846 * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

constexpr std::uint64_t kBackgroundStream = 1;
constexpr std::uint64_t kPlanStream = 2;
constexpr std::uint64_t kBurstStream = 3;

std::vector<double> burst_waveform(const Burst& b, double background_rms, int sample_rate) {
  const auto n = static_cast<std::size_t>(std::llround(b.duration_s * sample_rate));
  std::vector<double> w(n);
  Gaussian g(b.noise_seed);
  const double tau = b.duration_s / 3.0 * sample_rate;
  double power = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = std::exp(-static_cast<double>(i) / tau) * g();
    power += w[i] * w[i];
  }
  power /= static_cast<double>(n);
  const double target = background_rms * background_rms * std::pow(10.0, b.snr_db / 10.0);
  const double gain = std::sqrt(target / power);
  for (double& v : w) v *= gain;
  return w;
}

}  // namespace

void ScenarioConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  const bool ok = n_events >= 1 && event_spacing_s > 0.0 && group_size >= 1 &&
                  group_gap_s >= 0.0 && first_onset_s >= 0.0 && tail_s >= 0.0 &&
                  background_rms > 0.0 && std::isfinite(source_snr_db) &&
                  std::isfinite(receiver_snr_db) && std::isfinite(interferer_snr_db) &&
                  propagation_delay_s >= 0.0 && std::abs(clock_offset_s) <= kMaxClockOffsetS &&
                  prob(p_not_heard) && prob(p_faint) && prob(p_weak) &&
                  p_not_heard + p_faint <= 1.0 && n_interferers >= 0 && min_burst_s > 0.0 &&
                  max_burst_s >= min_burst_s && max_burst_s + 1.0 <= event_spacing_s &&
                  weak_drop_db >= 0.0 && !source_device.empty() && !receiver_device.empty() &&
                  source_device != receiver_device;
  if (!ok) throw Error("invalid scenario");
}

std::vector<EventLabel> ScenarioTruth::source_labels() const {
  std::vector<EventLabel> out;
  for (const auto& e : events) {
    if (e.label.origin != Origin::source) continue;
    out.emplace_back(e.label.start_s + source_clock_offset_s, e.label.end_s + source_clock_offset_s,
                     Audibility::clear, Origin::source);
  }
  return out;
}

std::vector<EventLabel> ScenarioTruth::receiver_labels() const {
  std::vector<EventLabel> out;
  for (const auto& e : events) {
    out.emplace_back(e.receiver_start_s, e.receiver_end_s, e.label.audibility, e.label.origin);
  }
  std::sort(out.begin(), out.end(),
            [](const EventLabel& a, const EventLabel& b) { return a.start_s < b.start_s; });
  return out;
}

ScenarioPlan plan_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  ScenarioPlan plan;
  plan.config = cfg;
  std::mt19937_64 rng(mix_seed(cfg.seed, kPlanStream));
  auto draw_duration = [&] {
    return cfg.min_burst_s + (cfg.max_burst_s - cfg.min_burst_s) * uniform01(rng);
  };

  ScenarioTruth& truth = plan.truth;
  truth.receiver_clock_offset_s = cfg.clock_offset_s;
  truth.propagation_delay_s = cfg.propagation_delay_s;

  double last_end = 0.0;
  for (int k = 0; k < cfg.n_events; ++k) {
    const int group = k / cfg.group_size;
    const double onset = cfg.first_onset_s + k * cfg.event_spacing_s + group * cfg.group_gap_s;
    const double duration = draw_duration();
    const std::uint64_t noise_seed = mix_seed(cfg.seed, kBurstStream * 1000003ULL + static_cast<std::uint64_t>(k));

    const double u = uniform01(rng);
    Audibility heard = Audibility::clear;
    double rcv_snr = cfg.receiver_snr_db;
    if (u < cfg.p_not_heard) {
      heard = Audibility::not_heard;
    } else if (u < cfg.p_not_heard + cfg.p_faint) {
      heard = Audibility::faint;
      rcv_snr -= kFaintDropDb;
    }
    const bool weak = uniform01(rng) < cfg.p_weak;
    if (heard == Audibility::clear && weak) rcv_snr -= cfg.weak_drop_db;

    plan.source_bursts.push_back({onset, duration, cfg.source_snr_db, noise_seed});
    if (heard != Audibility::not_heard) {
      plan.receiver_bursts.push_back(
          {onset + cfg.propagation_delay_s, duration, rcv_snr, noise_seed});
    }
    TruthEvent e;
    e.label = EventLabel(onset, onset + duration, heard, Origin::source);
    e.receiver_start_s = onset + cfg.propagation_delay_s + cfg.clock_offset_s;
    e.receiver_end_s = e.receiver_start_s + duration;
    truth.events.push_back(e);
    last_end = std::max(last_end, onset + duration + cfg.propagation_delay_s);
  }
  truth.duration_s = std::max(last_end, truth.events.back().label.start_s) + cfg.tail_s;

  // Interferers: uniform over the scenario, at least 1 s apart from each other.
  std::vector<double> starts;
  const double span = truth.duration_s - cfg.max_burst_s - 1.0;
  int attempts = 0;
  while (static_cast<int>(starts.size()) < cfg.n_interferers) {
    if (++attempts > 100000) throw Error("invalid scenario");
    const double t = 0.5 + uniform01(rng) * std::max(span - 0.5, 0.0);
    const bool clash = std::any_of(starts.begin(), starts.end(), [&](double s) {
      return std::abs(s - t) < cfg.max_burst_s + 1.0;
    });
    if (!clash) starts.push_back(t);
  }
  std::sort(starts.begin(), starts.end());
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const double duration = draw_duration();
    const std::uint64_t noise_seed =
        mix_seed(cfg.seed, kBurstStream * 1000003ULL + 500000ULL + i);
    plan.receiver_bursts.push_back({starts[i], duration, cfg.interferer_snr_db, noise_seed});
    TruthEvent e;
    e.label = EventLabel(starts[i], starts[i] + duration, Audibility::clear, Origin::interferer);
    e.receiver_start_s = starts[i] + cfg.clock_offset_s;
    e.receiver_end_s = e.receiver_start_s + duration;
    truth.events.push_back(e);
  }
  std::sort(plan.receiver_bursts.begin(), plan.receiver_bursts.end(),
            [](const Burst& a, const Burst& b) { return a.wall_time_s < b.wall_time_s; });
  return plan;
}

std::vector<double> render_audio(const ScenarioPlan& plan, Device device, std::size_t first,
                                 std::size_t count, const RenderOptions& options) {
  const ScenarioConfig& cfg = plan.config;
  const int sr = kDefaultSampleRateHz;
  const auto chunk = static_cast<std::size_t>(std::llround(kRenderChunkS * sr));
  std::vector<double> out(count, 0.0);
  const std::uint64_t device_tag = device == Device::source ? 11 : 13;

  if (options.background) {
    // Each fixed chunk owns an independent noise stream, so any sample range
    // renders identically regardless of how the caller slices it.
    const std::size_t last = first + count;
    for (std::size_t c = first / chunk; c * chunk < last; ++c) {
      Gaussian g(mix_seed(mix_seed(cfg.seed, kBackgroundStream), device_tag * 1000000007ULL + c));
      const std::size_t c0 = c * chunk;
      for (std::size_t i = 0; i < chunk; ++i) {
        const double v = g() * cfg.background_rms;
        const std::size_t idx = c0 + i;
        if (idx >= first && idx < last) out[idx - first] = v;
      }
    }
  }
  if (options.events) {
    const auto& bursts = device == Device::source ? plan.source_bursts : plan.receiver_bursts;
    for (const auto& b : bursts) {
      const auto start = static_cast<std::size_t>(std::llround(b.wall_time_s * sr));
      const auto len = static_cast<std::size_t>(std::llround(b.duration_s * sr));
      if (start >= first + count || start + len <= first) continue;
      const auto wave = burst_waveform(b, cfg.background_rms, sr);
      for (std::size_t i = 0; i < wave.size(); ++i) {
        const std::size_t idx = start + i;
        if (idx >= first && idx < first + count) out[idx - first] += wave[i];
      }
    }
  }
  for (double& v : out) v = std::clamp(v, -1.0, 1.0);
  return out;
}

Scenario generate(const ScenarioConfig& cfg) {
  const ScenarioPlan plan = plan_scenario(cfg);
  const MelFrontend frontend;
  const auto chunk = static_cast<std::size_t>(std::llround(kRenderChunkS * kDefaultSampleRateHz));
  const auto total = static_cast<std::size_t>(std::floor(plan.truth.duration_s / kRenderChunkS)) + 1;

  auto render_stream = [&](Device device) {
    Matrix frames(0, static_cast<std::size_t>(kDefaultMelBins));
    std::vector<double> all;
    for (std::size_t c = 0; c < total; ++c) {
      const auto audio = render_audio(plan, device, c * chunk, chunk);
      const Matrix part = frontend.process(audio);
      all.insert(all.end(), part.data().begin(), part.data().end());
    }
    const std::size_t rows = all.size() / static_cast<std::size_t>(kDefaultMelBins);
    Matrix m(rows, static_cast<std::size_t>(kDefaultMelBins));
    m.data() = std::move(all);
    return m;
  };

  Scenario s;
  s.truth = plan.truth;
  s.source = MelSpectrogram(render_stream(Device::source), kPrivacyFramePeriodS,
                            cfg.source_device, plan.truth.source_clock_offset_s);
  s.receiver = MelSpectrogram(render_stream(Device::receiver), kPrivacyFramePeriodS,
                              cfg.receiver_device, plan.truth.receiver_clock_offset_s);
  return s;
}

std::array<double, 2> split_boundaries(const ScenarioTruth& truth, std::array<double, 3> ratios) {
  for (const double r : ratios) {
    if (!(r >= 0.0)) throw Error("invalid split ratios");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw Error("invalid split ratios");
  }
  // Wall-clock extent of every event on either device, merged.
  std::vector<std::pair<double, double>> spans;
  for (const auto& e : truth.events) {
    const double rcv_start = e.receiver_start_s - truth.receiver_clock_offset_s;
    const double rcv_end = e.receiver_end_s - truth.receiver_clock_offset_s;
    spans.emplace_back(std::min(e.label.start_s, rcv_start), std::max(e.label.end_s, rcv_end));
  }
  std::sort(spans.begin(), spans.end());
  std::vector<std::pair<double, double>> merged;
  for (const auto& s : spans) {
    if (!merged.empty() && s.first < merged.back().second) {
      merged.back().second = std::max(merged.back().second, s.second);
    } else {
      merged.push_back(s);
    }
  }
  auto snap = [&](double b) {
    for (const auto& [lo, hi] : merged) {
      if (lo < b && b < hi) return (b - lo <= hi - b) ? lo : hi;
    }
    return b;
  };
  const double t = truth.duration_s;
  const double b0 = snap(ratios[0] * t);
  const double b1 = std::max(b0, snap((ratios[0] + ratios[1]) * t));
  return {b0, b1};
}

std::array<Partition, 3> split(const Scenario& scenario, std::array<double, 3> ratios) {
  const auto [b0, b1] = split_boundaries(scenario.truth, ratios);
  const double t_end = std::max(scenario.truth.duration_s,
                                scenario.source.frame_time(scenario.source.n_frames()));
  // A boundary at the end of the scenario keeps trailing frames in the earlier part.
  auto edge = [&](double b) { return b >= scenario.truth.duration_s ? 1e300 : b; };
  const std::array<double, 4> edges{-1e300, edge(b0), edge(b1), 1e300};
  std::array<Partition, 3> parts;

  auto frames_in = [](const MelSpectrogram& spec, double a, double b) {
    std::size_t first = spec.n_frames(), last = 0;
    for (std::size_t i = 0; i < spec.n_frames(); ++i) {
      const double t = spec.frame_time(i);
      if (t >= a && t < b) {
        first = std::min(first, i);
        last = i + 1;
      }
    }
    if (first >= last) return spec.slice(spec.n_frames(), 0);
    return spec.slice(first, last - first);
  };

  const double rcv_off = scenario.truth.receiver_clock_offset_s;
  const double src_off = scenario.truth.source_clock_offset_s;
  for (std::size_t p = 0; p < 3; ++p) {
    Partition& part = parts[p];
    part.start_s = std::min(p == 0 ? 0.0 : edges[p], t_end);
    part.end_s = std::min(edges[p + 1], t_end);
    part.source = frames_in(scenario.source, edges[p] + src_off, edges[p + 1] + src_off);
    part.receiver = frames_in(scenario.receiver, edges[p] + rcv_off, edges[p + 1] + rcv_off);
    for (const auto& e : scenario.truth.events) {
      if (e.label.start_s >= edges[p] && e.label.start_s < edges[p + 1]) part.events.push_back(e);
    }
  }
  return parts;
}

}  // namespace noisepair
