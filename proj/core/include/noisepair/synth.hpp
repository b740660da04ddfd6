#pragma once

// Synthetic paired-sensor scenarios with ground truth.
//
// Source events are decaying white-noise bursts fired at a fixed spacing in
// groups (one group per tested configuration). The receiver hears a delayed,
// attenuated copy of each burst, or a fainter copy, or nothing; receiver-only
// interferers are added, and the receiver clock is offset from the source.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "noisepair/frontend.hpp"
#include "noisepair/labels.hpp"

namespace noisepair {

inline constexpr double kFaintDropDb = 10.0;
inline constexpr double kMaxClockOffsetS = 10.0;
// Audio is rendered and transformed in chunks of this many seconds.
inline constexpr double kRenderChunkS = 10.0;

struct ScenarioConfig {
  int n_events = 10;
  double event_spacing_s = 30.0;
  int group_size = 10;
  double group_gap_s = 90.0;  // extra pause between groups
  double first_onset_s = 5.0;
  double tail_s = 20.0;

  double background_rms = 0.01;
  double source_snr_db = 20.0;
  double receiver_snr_db = 6.0;
  double interferer_snr_db = 6.0;
  double propagation_delay_s = 0.0;
  double clock_offset_s = 0.0;  // receiver clock minus source clock

  double p_not_heard = 0.0;
  double p_faint = 0.0;
  // Heard (clear) events rendered weak_drop_db below receiver_snr_db.
  double p_weak = 0.0;
  double weak_drop_db = 8.0;
  int n_interferers = 0;

  double min_burst_s = 0.05;
  double max_burst_s = 0.2;

  std::uint64_t seed = 1;
  std::string source_device = "source";
  std::string receiver_device = "receiver";

  void validate() const;
};

enum class Device { source, receiver };

// One burst as rendered on one device.
struct Burst {
  double wall_time_s = 0.0;
  double duration_s = 0.0;
  double snr_db = 0.0;
  std::uint64_t noise_seed = 0;
};

struct ScenarioTruth {
  std::vector<TruthEvent> events;
  double source_clock_offset_s = 0.0;
  double receiver_clock_offset_s = 0.0;
  double propagation_delay_s = 0.0;
  double duration_s = 0.0;

  // Labels on each device's own clock.
  std::vector<EventLabel> source_labels() const;
  std::vector<EventLabel> receiver_labels() const;
};

struct ScenarioPlan {
  ScenarioConfig config;
  ScenarioTruth truth;
  std::vector<Burst> source_bursts;
  std::vector<Burst> receiver_bursts;
};

ScenarioPlan plan_scenario(const ScenarioConfig& cfg);

struct RenderOptions {
  bool background = true;
  bool events = true;
};

// Audio samples [first, first + count) of a device on the wall clock.
std::vector<double> render_audio(const ScenarioPlan& plan, Device device, std::size_t first,
                                 std::size_t count, const RenderOptions& options = {});

struct Scenario {
  MelSpectrogram source;
  MelSpectrogram receiver;
  ScenarioTruth truth;
};

Scenario generate(const ScenarioConfig& cfg);

struct Partition {
  double start_s = 0.0;  // wall clock
  double end_s = 0.0;
  MelSpectrogram source;
  MelSpectrogram receiver;
  std::vector<TruthEvent> events;
};

// Contiguous time split (train, validation, test). A boundary that falls
// inside an event is moved to the nearer edge of that event.
std::array<Partition, 3> split(const Scenario& scenario, std::array<double, 3> ratios);

// Boundaries used by split(), in wall-clock seconds.
std::array<double, 2> split_boundaries(const ScenarioTruth& truth, std::array<double, 3> ratios);

}  // namespace noisepair
