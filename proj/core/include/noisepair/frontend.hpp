#pragma once

// Audio -> privacy-compatible mel spectrogram frontend.
//
// Audio is integrated into frames of at least 125 ms. Each frame holds the
// dB value of the mel-filtered average power of that block; the power is
// estimated by averaging Hann-windowed STFT sub-frames (32 ms window, hop of
// at most 16 ms) that tile the block.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "noisepair/matrix.hpp"

namespace noisepair {

inline constexpr double kPrivacyFramePeriodS = 0.125;
inline constexpr int kDefaultSampleRateHz = 16000;
inline constexpr int kDefaultMelBins = 30;
inline constexpr double kDefaultFloorDb = -80.0;
// Added to power before taking log10.
inline constexpr double kPowerEpsilon = 1e-10;

struct AudioClip {
  std::vector<double> samples;
  int sample_rate_hz = kDefaultSampleRateHz;
  std::string device_id;
  double start_time_s = 0.0;
};

struct FrontendConfig {
  int n_mels = kDefaultMelBins;
  double frame_period_s = kPrivacyFramePeriodS;
  int sample_rate_hz = kDefaultSampleRateHz;
  int fft_size = 512;        // 32 ms at 16 kHz
  int max_stft_hop = 256;    // 16 ms at 16 kHz
  double f_min_hz = 50.0;
  double f_max_hz = 0.0;     // <= 0 means Nyquist
  double floor_db = kDefaultFloorDb;
};

// Frames of mel-band dB values for one device, [n_frames x n_mels].
// Construction enforces the privacy floor on the frame period.
class MelSpectrogram {
 public:
  MelSpectrogram() = default;
  MelSpectrogram(Matrix frames, double frame_period_s, std::string device_id,
                 double start_time_s, double floor_db = kDefaultFloorDb);

  const Matrix& frames() const { return frames_; }
  std::size_t n_frames() const { return frames_.rows(); }
  std::size_t n_mels() const { return frames_.cols(); }
  double frame_period_s() const { return frame_period_s_; }
  const std::string& device_id() const { return device_id_; }
  double start_time_s() const { return start_time_s_; }
  double floor_db() const { return floor_db_; }
  double frame_time(std::size_t i) const {
    return start_time_s_ + static_cast<double>(i) * frame_period_s_;
  }

  void set_start_time(double t) { start_time_s_ = t; }
  void set_device_id(std::string id) { device_id_ = std::move(id); }

  // Frames [first, first + count) as a new spectrogram.
  MelSpectrogram slice(std::size_t first, std::size_t count) const;

  friend bool operator==(const MelSpectrogram&, const MelSpectrogram&) = default;

 private:
  Matrix frames_;
  double frame_period_s_ = kPrivacyFramePeriodS;
  std::string device_id_;
  double start_time_s_ = 0.0;
  double floor_db_ = kDefaultFloorDb;
};

// Base spectrogram plus appended delta orders: tensor [channels x mels x frames].
struct ChannelStack {
  int order = 0;
  std::size_t n_mels = 0;
  std::size_t n_frames = 0;
  std::vector<double> values;
  double frame_period_s = kPrivacyFramePeriodS;
  double start_time_s = 0.0;
  std::string device_id;

  std::size_t n_channels() const { return static_cast<std::size_t>(order) + 1; }
  double at(std::size_t channel, std::size_t mel, std::size_t frame) const {
    return values[(channel * n_mels + mel) * n_frames + frame];
  }
  double& at(std::size_t channel, std::size_t mel, std::size_t frame) {
    return values[(channel * n_mels + mel) * n_frames + frame];
  }
};

struct LevelSeries {
  std::vector<double> values;
  double frame_period_s = kPrivacyFramePeriodS;
  double start_time_s = 0.0;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filters with peak weight 1, centers evenly spaced on the mel
// scale between f_min and f_max. Columns are FFT bins 0..fft_bins-1 spanning
// 0..Nyquist.
Matrix build_mel_filterbank(int n_mels, int fft_bins, int sample_rate_hz,
                            double f_min_hz, double f_max_hz);

// Center frequency (Hz) of each filter built with the same arguments.
std::vector<double> mel_center_frequencies(int n_mels, double f_min_hz, double f_max_hz);

double power_to_db(double power, double floor_db = kDefaultFloorDb);

// Reusable frontend with precomputed window, FFT plan and filterbank.
class MelFrontend {
 public:
  explicit MelFrontend(FrontendConfig config = {});

  const FrontendConfig& config() const { return config_; }
  std::size_t frame_samples() const { return frame_samples_; }
  const Matrix& filterbank() const { return filterbank_; }

  // One row per complete frame in `samples`; trailing partial frame dropped.
  Matrix process(std::span<const double> samples) const;

  // Average power spectrum (fft_size/2+1 bins) of one frame block.
  std::vector<double> block_power(std::span<const double> block) const;

  // Sub-window start offsets inside one frame block.
  const std::vector<std::size_t>& subframe_offsets() const { return offsets_; }
  const std::vector<double>& window() const { return window_; }
  // Normalisation applied to |X_k|^2: 1 / (sum of window)^2.
  double power_scale() const { return power_scale_; }

 private:
  FrontendConfig config_;
  std::size_t frame_samples_ = 0;
  std::vector<double> window_;
  std::vector<std::size_t> offsets_;
  double power_scale_ = 1.0;
  Matrix filterbank_;
  std::vector<double> twiddle_re_;
  std::vector<double> twiddle_im_;
  std::vector<std::size_t> bitrev_;
};

MelSpectrogram compute_mel_spectrogram(const AudioClip& clip, const FrontendConfig& config = {});

// Order-k time difference per mel bin. The first output frame replicates the
// second so the length is preserved.
Matrix delta(const Matrix& spec, int order);

ChannelStack stack_channels(const MelSpectrogram& spec, int order);

// Per-frame dB of total band power. Bins sitting at the floor carry no power.
LevelSeries level_series(const MelSpectrogram& spec);

}  // namespace noisepair
