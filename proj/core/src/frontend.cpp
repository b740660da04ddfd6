#include "noisepair/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "noisepair/error.hpp"

namespace noisepair {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace

MelSpectrogram::MelSpectrogram(Matrix frames, double frame_period_s, std::string device_id,
                               double start_time_s, double floor_db)
    : frames_(std::move(frames)),
      frame_period_s_(frame_period_s),
      device_id_(std::move(device_id)),
      start_time_s_(start_time_s),
      floor_db_(floor_db) {
  if (!(frame_period_s_ >= kPrivacyFramePeriodS)) {
    throw Error("privacy violation: frame period too small");
  }
}

MelSpectrogram MelSpectrogram::slice(std::size_t first, std::size_t count) const {
  first = std::min(first, n_frames());
  count = std::min(count, n_frames() - first);
  Matrix out(count, n_mels());
  for (std::size_t i = 0; i < count; ++i) {
    std::copy_n(frames_.row(first + i).begin(), n_mels(), out.row(i).begin());
  }
  return MelSpectrogram(std::move(out), frame_period_s_, device_id_, frame_time(first), floor_db_);
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_center_frequencies(int n_mels, double f_min_hz, double f_max_hz) {
  const double lo = hz_to_mel(f_min_hz);
  const double hi = hz_to_mel(f_max_hz);
  std::vector<double> centers(static_cast<std::size_t>(n_mels));
  for (int m = 0; m < n_mels; ++m) {
    centers[static_cast<std::size_t>(m)] =
        mel_to_hz(lo + (hi - lo) * static_cast<double>(m + 1) / static_cast<double>(n_mels + 1));
  }
  return centers;
}

Matrix build_mel_filterbank(int n_mels, int fft_bins, int sample_rate_hz, double f_min_hz,
                            double f_max_hz) {
  const double nyquist = 0.5 * static_cast<double>(sample_rate_hz);
  if (n_mels < 1 || fft_bins < 2 || sample_rate_hz <= 0 || !(f_min_hz >= 0.0) ||
      !(f_min_hz < f_max_hz) || !(f_max_hz <= nyquist)) {
    throw Error("invalid filterbank config");
  }

  // Edge points: n_mels + 2 values evenly spaced in mel.
  const double lo = hz_to_mel(f_min_hz);
  const double hi = hz_to_mel(f_max_hz);
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  edges.front() = f_min_hz;
  edges.back() = f_max_hz;

  const double bin_hz = nyquist / static_cast<double>(fft_bins - 1);
  Matrix fb(static_cast<std::size_t>(n_mels), static_cast<std::size_t>(fft_bins));
  for (int m = 0; m < n_mels; ++m) {
    const double left = edges[static_cast<std::size_t>(m)];
    const double center = edges[static_cast<std::size_t>(m + 1)];
    const double right = edges[static_cast<std::size_t>(m + 2)];
    for (int k = 0; k < fft_bins; ++k) {
      const double f = bin_hz * static_cast<double>(k);
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      fb(static_cast<std::size_t>(m), static_cast<std::size_t>(k)) = w;
    }
  }
  return fb;
}

double power_to_db(double power, double floor_db) {
  if (!(power >= 0.0)) throw Error("invalid power");
  return std::max(10.0 * std::log10(power + kPowerEpsilon), floor_db);
}

MelFrontend::MelFrontend(FrontendConfig config) : config_(config) {
  if (config_.n_mels < 1) throw Error("invalid frontend config");
  if (!(config_.frame_period_s >= kPrivacyFramePeriodS)) {
    throw Error("privacy violation: frame period too small");
  }
  if (config_.sample_rate_hz <= 0 || !is_power_of_two(config_.fft_size) || config_.fft_size < 4 ||
      config_.max_stft_hop < 1) {
    throw Error("invalid frontend config");
  }
  const double exact = config_.frame_period_s * static_cast<double>(config_.sample_rate_hz);
  if (std::abs(exact - std::round(exact)) > 1e-6) throw Error("invalid frontend config");
  frame_samples_ = static_cast<std::size_t>(std::llround(exact));

  const auto n = static_cast<std::size_t>(config_.fft_size);
  window_.resize(n);
  double window_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    window_[i] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(i) / static_cast<double>(n));
    window_sum += window_[i];
  }
  power_scale_ = 1.0 / (window_sum * window_sum);

  // Sub-windows tile the whole block with a hop no larger than max_stft_hop.
  if (frame_samples_ <= n) {
    offsets_ = {0};
  } else {
    const std::size_t span = frame_samples_ - n;
    const auto hop = static_cast<std::size_t>(config_.max_stft_hop);
    const std::size_t count = (span + hop - 1) / hop + 1;
    for (std::size_t i = 0; i < count; ++i) {
      offsets_.push_back(static_cast<std::size_t>(std::llround(
          static_cast<double>(i) * static_cast<double>(span) / static_cast<double>(count - 1))));
    }
  }

  const double nyquist = 0.5 * static_cast<double>(config_.sample_rate_hz);
  const double f_max = config_.f_max_hz > 0.0 ? config_.f_max_hz : nyquist;
  filterbank_ = build_mel_filterbank(config_.n_mels, config_.fft_size / 2 + 1,
                                     config_.sample_rate_hz, config_.f_min_hz, f_max);

  // Half-size complex FFT plan for the real-input transform.
  const std::size_t half = n / 2;
  twiddle_re_.resize(n / 2);
  twiddle_im_.resize(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    twiddle_re_[k] = std::cos(kTwoPi * static_cast<double>(k) / static_cast<double>(n));
    twiddle_im_[k] = -std::sin(kTwoPi * static_cast<double>(k) / static_cast<double>(n));
  }
  bitrev_.resize(half);
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < half) ++bits;
  for (std::size_t i = 0; i < half; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < bits; ++b) {
      if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
    }
    bitrev_[i] = r;
  }
}

std::vector<double> MelFrontend::block_power(std::span<const double> block) const {
  const auto n = static_cast<std::size_t>(config_.fft_size);
  const std::size_t half = n / 2;
  const std::size_t bins = half + 1;
  std::vector<double> power(bins, 0.0);
  std::vector<double> re(half), im(half);

  for (const std::size_t offset : offsets_) {
    // Pack even/odd real samples into one complex sequence of length n/2.
    for (std::size_t i = 0; i < half; ++i) {
      const std::size_t a = offset + 2 * i;
      const std::size_t b = a + 1;
      const double xa = a < block.size() ? block[a] * window_[2 * i] : 0.0;
      const double xb = b < block.size() ? block[b] * window_[2 * i + 1] : 0.0;
      re[bitrev_[i]] = xa;
      im[bitrev_[i]] = xb;
    }
    for (std::size_t len = 2; len <= half; len <<= 1) {
      const std::size_t step = n / len;  // twiddle stride in the size-n table
      for (std::size_t start = 0; start < half; start += len) {
        for (std::size_t j = 0; j < len / 2; ++j) {
          const double wr = twiddle_re_[j * step];
          const double wi = twiddle_im_[j * step];
          const std::size_t p = start + j;
          const std::size_t q = p + len / 2;
          const double tr = re[q] * wr - im[q] * wi;
          const double ti = re[q] * wi + im[q] * wr;
          re[q] = re[p] - tr;
          im[q] = im[p] - ti;
          re[p] += tr;
          im[p] += ti;
        }
      }
    }
    // Unpack: X[k] = E[k] + W^k O[k].
    for (std::size_t k = 0; k <= half; ++k) {
      const std::size_t k1 = k % half;
      const std::size_t k2 = (half - k) % half;
      const double zr = re[k1], zi = im[k1];
      const double cr = re[k2], ci = -im[k2];
      const double er = 0.5 * (zr + cr), ei = 0.5 * (zi + ci);
      // O[k] = (Z[k] - conj(Z[N/2-k])) / (2i)
      const double dr = 0.5 * (zr - cr), di = 0.5 * (zi - ci);
      const double or_ = di, oi = -dr;
      double wr = 0.0, wi = 0.0;
      if (k < half) {
        wr = twiddle_re_[k];
        wi = twiddle_im_[k];
      } else {
        wr = -1.0;
      }
      const double xr = er + (or_ * wr - oi * wi);
      const double xi = ei + (or_ * wi + oi * wr);
      power[k] += (xr * xr + xi * xi);
    }
  }
  const double scale = power_scale_ / static_cast<double>(offsets_.size());
  for (double& p : power) p *= scale;
  return power;
}

Matrix MelFrontend::process(std::span<const double> samples) const {
  const std::size_t n_frames = samples.size() / frame_samples_;
  Matrix out(n_frames, static_cast<std::size_t>(config_.n_mels));
  for (std::size_t f = 0; f < n_frames; ++f) {
    const auto power = block_power(samples.subspan(f * frame_samples_, frame_samples_));
    for (std::size_t m = 0; m < out.cols(); ++m) {
      const auto weights = filterbank_.row(m);
      double acc = 0.0;
      for (std::size_t k = 0; k < power.size(); ++k) acc += weights[k] * power[k];
      out(f, m) = power_to_db(acc, config_.floor_db);
    }
  }
  return out;
}

MelSpectrogram compute_mel_spectrogram(const AudioClip& clip, const FrontendConfig& config) {
  if (clip.sample_rate_hz != config.sample_rate_hz) throw Error("unsupported sample rate");
  for (const double s : clip.samples) {
    if (!std::isfinite(s)) throw Error("invalid audio");
  }
  MelFrontend frontend(config);
  if (clip.samples.size() < frontend.frame_samples()) throw Error("insufficient audio");
  return MelSpectrogram(frontend.process(clip.samples), config.frame_period_s, clip.device_id,
                        clip.start_time_s, config.floor_db);
}

Matrix delta(const Matrix& spec, int order) {
  if (order < 1) throw Error("invalid delta order");
  if (spec.rows() < 2) throw Error("too short for delta");
  Matrix current = spec;
  for (int k = 0; k < order; ++k) {
    Matrix next(current.rows(), current.cols());
    for (std::size_t t = 1; t < current.rows(); ++t) {
      for (std::size_t m = 0; m < current.cols(); ++m) {
        next(t, m) = current(t, m) - current(t - 1, m);
      }
    }
    for (std::size_t m = 0; m < current.cols(); ++m) next(0, m) = next(1, m);
    current = std::move(next);
  }
  return current;
}

ChannelStack stack_channels(const MelSpectrogram& spec, int order) {
  if (order < 0 || order > 3) throw Error("unsupported stack order");
  ChannelStack stack;
  stack.order = order;
  stack.n_mels = spec.n_mels();
  stack.n_frames = spec.n_frames();
  stack.frame_period_s = spec.frame_period_s();
  stack.start_time_s = spec.start_time_s();
  stack.device_id = spec.device_id();
  stack.values.resize(stack.n_channels() * stack.n_mels * stack.n_frames);

  auto put = [&stack](std::size_t channel, const Matrix& m) {
    for (std::size_t t = 0; t < stack.n_frames; ++t) {
      for (std::size_t b = 0; b < stack.n_mels; ++b) stack.at(channel, b, t) = m(t, b);
    }
  };
  put(0, spec.frames());
  for (int k = 1; k <= order; ++k) put(static_cast<std::size_t>(k), delta(spec.frames(), k));
  return stack;
}

LevelSeries level_series(const MelSpectrogram& spec) {
  if (spec.n_frames() == 0) throw Error("empty spectrogram");
  LevelSeries out;
  out.frame_period_s = spec.frame_period_s();
  out.start_time_s = spec.start_time_s();
  out.values.reserve(spec.n_frames());
  for (std::size_t t = 0; t < spec.n_frames(); ++t) {
    double total = 0.0;
    for (const double db : spec.frames().row(t)) {
      if (db > spec.floor_db()) total += std::pow(10.0, db / 10.0);
    }
    out.values.push_back(power_to_db(total, spec.floor_db()));
  }
  return out;
}

}  // namespace noisepair
