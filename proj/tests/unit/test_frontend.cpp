#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "noisepair/error.hpp"
#include "noisepair/frontend.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace noisepair;

namespace {

AudioClip tone(double hz, double seconds, double amp = 0.5) {
  AudioClip c;
  const auto n = static_cast<std::size_t>(seconds * 16000);
  for (std::size_t i = 0; i < n; ++i) {
    c.samples.push_back(amp * std::sin(2 * std::numbers::pi * hz * static_cast<double>(i) / 16000));
  }
  return c;
}

std::size_t argmax_row(const Matrix& m, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < m.cols(); ++j) {
    if (m(r, j) > m(r, best)) best = j;
  }
  return best;
}

Matrix random_matrix(testutil::Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.uniform(-80, 0);
  return m;
}

}  // namespace

TEST(MelScale, FixedPoints) {
  EXPECT_DOUBLE_EQ(hz_to_mel(0.0), 0.0);
  EXPECT_NEAR(hz_to_mel(1000.0), 1000.0, 0.2);
  EXPECT_NEAR(hz_to_mel(1000.0), 2595.0 * std::log10(1.0 + 1000.0 / 700.0), 1e-12);
  for (double f : {50.0, 440.0, 3000.0, 8000.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(f)), f, 1e-9);
}

TEST(Filterbank, InteriorBinsCovered) {
  const auto fb = build_mel_filterbank(30, 257, 16000, 50.0, 8000.0);
  ASSERT_EQ(fb.rows(), 30u);
  ASSERT_EQ(fb.cols(), 257u);
  const double bin_hz = 8000.0 / 256;
  for (std::size_t k = 0; k < fb.cols(); ++k) {
    const double f = bin_hz * static_cast<double>(k);
    if (f <= 50.0 || f >= 8000.0) continue;
    double sum = 0.0;
    for (std::size_t m = 0; m < fb.rows(); ++m) sum += fb(m, k);
    EXPECT_GT(sum, 0.0) << "bin " << k;
  }
}

TEST(Filterbank, RowsAreSinglePeakedAndOrdered) {
  const auto fb = build_mel_filterbank(30, 257, 16000, 50.0, 8000.0);
  std::size_t last_peak = 0;
  for (std::size_t m = 0; m < fb.rows(); ++m) {
    const auto peak = argmax_row(fb, m);
    EXPECT_GE(peak, last_peak);
    last_peak = peak;
    for (std::size_t k = 0; k < fb.cols(); ++k) {
      EXPECT_GE(fb(m, k), 0.0);
      EXPECT_LE(fb(m, k), 1.0 + 1e-12);
      if (k > 0 && k <= peak) {
        EXPECT_GE(fb(m, k), fb(m, k - 1));
      }
      if (k > peak) {
        EXPECT_LE(fb(m, k), fb(m, k - 1));
      }
    }
  }
}

TEST(Filterbank, InvalidConfig) {
  EXPECT_THROW(build_mel_filterbank(30, 257, 16000, 5000.0, 100.0), Error);
  EXPECT_THROW(build_mel_filterbank(30, 257, 16000, 50.0, 9000.0), Error);
  EXPECT_THROW(build_mel_filterbank(0, 257, 16000, 50.0, 8000.0), Error);
  try {
    build_mel_filterbank(30, 257, 16000, -1.0, 8000.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "invalid filterbank config");
  }
}

TEST(PowerToDb, Examples) {
  EXPECT_NEAR(power_to_db(1.0), 0.0, 1e-9);
  EXPECT_NEAR(power_to_db(10.0), 10.0, 1e-9);
  EXPECT_DOUBLE_EQ(power_to_db(0.0, -80.0), -80.0);
  EXPECT_THROW(power_to_db(-1.0), Error);
}

TEST(PowerToDb, MonotoneProperty) {
  testutil::Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const double a = std::pow(10.0, rng.uniform(-14, 3));
    const double b = a * (1.0 + rng.uniform(0, 3));
    EXPECT_LE(power_to_db(a), power_to_db(b));
  }
}

TEST(MelSpectrogram, SilenceGivesFloorFrames) {
  AudioClip c;
  c.samples.assign(16000, 0.0);
  const auto spec = compute_mel_spectrogram(c);
  ASSERT_EQ(spec.n_frames(), 8u);
  ASSERT_EQ(spec.n_mels(), 30u);
  for (double v : spec.frames().data()) EXPECT_DOUBLE_EQ(v, -80.0);
}

TEST(MelSpectrogram, ShapeLaw) {
  testutil::Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    AudioClip c;
    const int n = rng.integer(2000, 40000);
    for (int k = 0; k < n; ++k) c.samples.push_back(rng.uniform(-0.1, 0.1));
    EXPECT_EQ(compute_mel_spectrogram(c).n_frames(), static_cast<std::size_t>(n / 2000));
  }
}

TEST(MelSpectrogram, ToneMatchesDirectDftOracle) {
  const auto clip = tone(1000.0, 1.0);
  const auto spec = compute_mel_spectrogram(clip);
  const auto ref = oracle::mel_spectrogram(clip.samples);
  ASSERT_EQ(ref.size(), spec.n_frames());

  const auto centers = oracle::mel_centers(30, 50.0, 8000.0);
  std::size_t nearest = 0;
  for (std::size_t m = 1; m < centers.size(); ++m) {
    if (std::abs(centers[m] - 1000.0) < std::abs(centers[nearest] - 1000.0)) nearest = m;
  }
  for (std::size_t f = 0; f < spec.n_frames(); ++f) {
    EXPECT_EQ(argmax_row(spec.frames(), f), nearest);
    for (std::size_t m = 0; m < 30; ++m) EXPECT_NEAR(spec.frames()(f, m), ref[f][m], 0.1);
  }
}

TEST(MelSpectrogram, NoiseMatchesDirectDftOracle) {
  testutil::Rng rng(5);
  AudioClip c;
  for (int k = 0; k < 4000; ++k) c.samples.push_back(rng.normal(0, 0.05));
  const auto spec = compute_mel_spectrogram(c);
  const auto ref = oracle::mel_spectrogram(c.samples);
  for (std::size_t f = 0; f < spec.n_frames(); ++f)
    for (std::size_t m = 0; m < 30; ++m) EXPECT_NEAR(spec.frames()(f, m), ref[f][m], 1e-6);
}

TEST(MelSpectrogram, Deterministic) {
  testutil::Rng rng(8);
  AudioClip c;
  for (int k = 0; k < 8000; ++k) c.samples.push_back(rng.uniform(-1, 1));
  EXPECT_EQ(compute_mel_spectrogram(c), compute_mel_spectrogram(c));
}

TEST(MelSpectrogram, Errors) {
  AudioClip short_clip;
  short_clip.samples.assign(1999, 0.0);
  EXPECT_THROW(compute_mel_spectrogram(short_clip), Error);
  AudioClip bad;
  bad.samples.assign(2000, 0.0);
  bad.samples[10] = std::nan("");
  try {
    compute_mel_spectrogram(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "invalid audio");
  }
  AudioClip rate;
  rate.samples.assign(44100, 0.0);
  rate.sample_rate_hz = 44100;
  EXPECT_THROW(compute_mel_spectrogram(rate), Error);
  try {
    compute_mel_spectrogram(short_clip);
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "insufficient audio");
  }
}

TEST(MelSpectrogram, PrivacyFloor) {
  FrontendConfig cfg;
  cfg.frame_period_s = 0.0625;
  AudioClip c;
  c.samples.assign(16000, 0.0);
  try {
    compute_mel_spectrogram(c, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "privacy violation: frame period too small");
  }
  EXPECT_THROW(MelSpectrogram(Matrix(4, 30), 0.1, "d", 0.0), Error);
  EXPECT_NO_THROW(MelSpectrogram(Matrix(4, 30), 0.25, "d", 0.0));
}

TEST(MelSpectrogram, LongerPeriodIntegratesMore) {
  FrontendConfig cfg;
  cfg.frame_period_s = 0.25;
  AudioClip c = tone(500.0, 1.0);
  const auto spec = compute_mel_spectrogram(c, cfg);
  EXPECT_EQ(spec.n_frames(), 4u);
  MelFrontend fe(cfg);
  for (std::size_t i = 1; i < fe.subframe_offsets().size(); ++i) {
    EXPECT_LE(fe.subframe_offsets()[i] - fe.subframe_offsets()[i - 1], 256u);
  }
  EXPECT_EQ(fe.subframe_offsets().back() + 512, fe.frame_samples());
}

TEST(Delta, ConstantGivesZero) {
  Matrix m(8, 30, -42.0);
  for (int k = 1; k <= 3; ++k)
    for (double v : delta(m, k).data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Delta, RampGivesConstantSlope) {
  Matrix m(8, 30);
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t b = 0; b < 30; ++b) m(t, b) = -60.0 + 2.5 * static_cast<double>(t) + static_cast<double>(b);
  for (double v : delta(m, 1).data()) EXPECT_DOUBLE_EQ(v, 2.5);
  for (double v : delta(m, 2).data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Delta, MatchesElementwiseOracle) {
  testutil::Rng rng(21);
  const auto x = random_matrix(rng, 8, 30);
  const auto d = delta(x, 1);
  for (std::size_t t = 1; t < 8; ++t)
    for (std::size_t b = 0; b < 30; ++b) EXPECT_DOUBLE_EQ(d(t, b), x(t, b) - x(t - 1, b));
  for (std::size_t b = 0; b < 30; ++b) EXPECT_DOUBLE_EQ(d(0, b), d(1, b));

  // Higher orders against iterated brute-force differences on the valid part.
  const auto d3 = delta(x, 3);
  for (std::size_t t = 3; t < 8; ++t) {
    for (std::size_t b = 0; b < 30; ++b) {
      const double ref = x(t, b) - 3 * x(t - 1, b) + 3 * x(t - 2, b) - x(t - 3, b);
      EXPECT_NEAR(d3(t, b), ref, 1e-9);
    }
  }
}

TEST(Delta, LinearityProperty) {
  testutil::Rng rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = static_cast<std::size_t>(rng.integer(2, 20));
    const auto a = random_matrix(rng, rows, 30);
    const auto b = random_matrix(rng, rows, 30);
    Matrix sum(rows, 30);
    for (std::size_t i = 0; i < sum.data().size(); ++i) sum.data()[i] = a.data()[i] + b.data()[i];
    const int k = rng.integer(1, 3);
    const auto da = delta(a, k), db = delta(b, k), ds = delta(sum, k);
    for (std::size_t i = 0; i < ds.data().size(); ++i) {
      EXPECT_NEAR(ds.data()[i], da.data()[i] + db.data()[i], 1e-9);
    }
  }
}

TEST(Delta, Errors) {
  try {
    delta(Matrix(1, 30), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "too short for delta");
  }
  EXPECT_THROW(delta(Matrix(4, 30), 0), Error);
}

TEST(StackChannels, Orders) {
  testutil::Rng rng(4);
  MelSpectrogram spec(random_matrix(rng, 10, 30), 0.125, "dev", 3.0);
  const auto s0 = stack_channels(spec, 0);
  EXPECT_EQ(s0.n_channels(), 1u);
  for (std::size_t t = 0; t < 10; ++t)
    for (std::size_t b = 0; b < 30; ++b) EXPECT_DOUBLE_EQ(s0.at(0, b, t), spec.frames()(t, b));
  const auto s3 = stack_channels(spec, 3);
  EXPECT_EQ(s3.n_channels(), 4u);
  const auto d2 = delta(spec.frames(), 2);
  for (std::size_t t = 0; t < 10; ++t)
    for (std::size_t b = 0; b < 30; ++b) EXPECT_DOUBLE_EQ(s3.at(2, b, t), d2(t, b));
  EXPECT_EQ(s3.device_id, "dev");
  EXPECT_DOUBLE_EQ(s3.start_time_s, 3.0);

  MelSpectrogram flat(Matrix(6, 30, -20.0), 0.125, "d", 0.0);
  const auto s1 = stack_channels(flat, 1);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t b = 0; b < 30; ++b) EXPECT_DOUBLE_EQ(s1.at(1, b, t), 0.0);
  try {
    stack_channels(spec, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "unsupported stack order");
  }
}

TEST(LevelSeries, SilenceAtFloor) {
  MelSpectrogram spec(Matrix(5, 30, -80.0), 0.125, "d", 0.0);
  const auto lv = level_series(spec);
  ASSERT_EQ(lv.values.size(), 5u);
  for (double v : lv.values) EXPECT_DOUBLE_EQ(v, -80.0);
}

TEST(LevelSeries, LoudFrameIsArgmax) {
  Matrix m(12, 30, -60.0);
  for (std::size_t b = 0; b < 30; ++b) m(7, b) = -20.0;
  const auto lv = level_series(MelSpectrogram(m, 0.125, "d", 0.0));
  EXPECT_EQ(std::max_element(lv.values.begin(), lv.values.end()) - lv.values.begin(), 7);
}

TEST(LevelSeries, MatchesSummationOracle) {
  testutil::Rng rng(6);
  const auto m = random_matrix(rng, 20, 30);
  const auto lv = level_series(MelSpectrogram(m, 0.125, "d", 0.0));
  for (std::size_t t = 0; t < 20; ++t) {
    double p = 0.0;
    for (std::size_t b = 0; b < 30; ++b) p += std::pow(10.0, m(t, b) / 10.0);
    EXPECT_NEAR(lv.values[t], std::max(10.0 * std::log10(p + 1e-10), -80.0), 1e-9);
  }
}
