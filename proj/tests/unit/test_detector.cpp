#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "noisepair/detector.hpp"
#include "noisepair/error.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace noisepair;

namespace {

DetectionWindow random_window(testutil::Rng& rng, std::size_t channels, double scale = 1.0) {
  DetectionWindow w;
  w.channels = channels;
  w.height = 30;
  w.width = 8;
  for (std::size_t i = 0; i < channels * 240; ++i) w.values.push_back(rng.normal(0, scale));
  return w;
}

ChannelStack flat_stack(std::size_t frames, int order = 0, double value = -60.0) {
  MelSpectrogram spec(Matrix(frames, 30, value), 0.125, "d", 0.0);
  return stack_channels(spec, order);
}

// Positives: loud top bins; negatives: silence.
std::vector<DetectionWindow> separable_set(testutil::Rng& rng, int n) {
  std::vector<DetectionWindow> out;
  for (int i = 0; i < n; ++i) {
    DetectionWindow w;
    w.channels = 1;
    w.height = 30;
    w.width = 8;
    w.values.assign(240, -80.0);
    const bool positive = i % 2 == 0;
    if (positive) {
      for (int m = 20; m < 30; ++m)
        for (int t = 0; t < 8; ++t) w.values[m * 8 + t] = -20.0 + rng.normal(0, 2);
    } else {
      for (double& v : w.values) v += std::abs(rng.normal(0, 1));
    }
    w.label = positive;
    out.push_back(w);
  }
  return out;
}

}  // namespace

TEST(Windowing, Counts) {
  EXPECT_EQ(make_windows(flat_stack(208), {}).size(), 67u);  // 26 s
  EXPECT_EQ(make_windows(flat_stack(8), {}).size(), 1u);
  for (std::size_t n : {8u, 9u, 10u, 11u, 100u, 1000u}) {
    EXPECT_EQ(make_windows(flat_stack(n), {}).size(), (n - 8) / 3 + 1);
  }
  try {
    make_windows(flat_stack(7), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "stream shorter than one window");
  }
}

TEST(Windowing, InvalidConfig) {
  EXPECT_THROW(make_windows(flat_stack(20), WindowingConfig{8, 0}), Error);
  EXPECT_THROW(make_windows(flat_stack(20), WindowingConfig{8, 9}), Error);
  EXPECT_THROW(make_windows(flat_stack(20), WindowingConfig{0, 1}), Error);
}

TEST(Windowing, EventLabelExample) {
  const std::vector<EventLabel> events{EventLabel(2.0, 2.1, Audibility::clear)};
  const auto windows = make_windows(flat_stack(80), {}, &events);
  for (const auto& w : windows) {
    ASSERT_TRUE(w.label.has_value());
    const bool expected = w.start_time_s > 1.1 && w.start_time_s < 2.1;
    EXPECT_EQ(*w.label, expected) << w.start_time_s;
  }
}

TEST(Windowing, LabelsMatchIntervalOverlapOracle) {
  testutil::Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<EventLabel> events;
    double t = rng.uniform(0, 3);
    while (t < 40) {
      const double len = rng.uniform(0.05, 0.4);
      const int aud = rng.integer(0, 2);
      events.emplace_back(t, t + len, static_cast<Audibility>(aud));
      t += len + rng.uniform(0.1, 6);
    }
    auto stack = flat_stack(static_cast<std::size_t>(rng.integer(8, 360)));
    stack.start_time_s = rng.uniform(-2, 2);
    for (const auto& w : make_windows(stack, {}, &events)) {
      bool expected = false;
      for (const auto& e : events) {
        expected = expected || (e.binary() && oracle::overlaps(w.start_time_s, 1.0, e.start_s, e.end_s));
      }
      EXPECT_EQ(*w.label, expected);
    }
  }
}

TEST(Windowing, ValuesCopiedFromStack) {
  testutil::Rng rng(1);
  Matrix m(20, 30);
  for (double& v : m.data()) v = rng.uniform(-80, 0);
  const auto stack = stack_channels(MelSpectrogram(m, 0.125, "d", 10.0), 1);
  const auto windows = make_windows(stack, {});
  const auto& w = windows[2];
  EXPECT_DOUBLE_EQ(w.start_time_s, 10.0 + 6 * 0.125);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t b = 0; b < 30; ++b)
      for (std::size_t t = 0; t < 8; ++t)
        EXPECT_DOUBLE_EQ(w.values[(c * 30 + b) * 8 + t], stack.at(c, b, 6 + t));
}

TEST(Forward, ZeroModelGivesHalf) {
  testutil::Rng rng(2);
  const auto model = make_zero_model(2);
  EXPECT_DOUBLE_EQ(forward(model, random_window(rng, 2)), 0.5);
}

TEST(Forward, MatchesLayerByLayerOracle) {
  testutil::Rng rng(3);
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const int channels = static_cast<int>(seed % 4) + 1;
    auto model = make_model(channels, seed);
    if (seed % 2 == 0) {
      model.norm.mean.assign(static_cast<std::size_t>(channels), -40.0);
      model.norm.stddev.assign(static_cast<std::size_t>(channels), 12.0);
    }
    for (auto& l : model.layers)
      for (double& b : l.bias) b = rng.normal(0, 0.1);
    const auto w = random_window(rng, static_cast<std::size_t>(channels), seed % 2 == 0 ? 20.0 : 1.0);
    const double p = forward(model, w);
    const double ref = oracle::forward(model, w);
    EXPECT_NEAR(p, ref, 1e-6 * std::abs(ref));
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
    EXPECT_EQ(p, forward(model, w));  // bit-identical on repeat
  }
}

TEST(Forward, ChannelMismatch) {
  testutil::Rng rng(4);
  const auto model = make_model(4, 1);
  try {
    forward(model, random_window(rng, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "model/input channel mismatch");
  }
  EXPECT_THROW(predict_stream(model, flat_stack(20, 1)), Error);
}

TEST(Forward, OutputInOpenUnitInterval) {
  testutil::Rng rng(9);
  auto model = make_model(1, 4);
  for (auto& l : model.layers) {
    if (l.kind == LayerKind::dense && l.shape[0] == 1) l.bias = {500.0};
  }
  const double p = forward(model, random_window(rng, 1));
  EXPECT_LT(p, 1.0);
  EXPECT_GT(p, 0.0);
}

TEST(Model, ArchitectureShapes) {
  const auto m = make_model(4, 1);
  ASSERT_EQ(m.layers.size(), 10u);
  EXPECT_EQ(m.layers[0].shape, (std::vector<int>{16, 4, 3, 3}));
  EXPECT_EQ(m.layers[3].shape, (std::vector<int>{32, 16, 3, 3}));
  EXPECT_EQ(m.layers[6].shape, (std::vector<int>{64, 32 * 7 * 2}));
  EXPECT_EQ(m.layers[8].shape, (std::vector<int>{1, 64}));
  EXPECT_EQ(m.layers.back().kind, LayerKind::logistic);
  // Glorot bound.
  const double s = std::sqrt(6.0 / (4 * 9 + 16 * 9));
  for (double w : m.layers[0].weights) EXPECT_LE(std::abs(w), s);
  EXPECT_EQ(make_model(4, 1), make_model(4, 1));
  EXPECT_NE(make_model(4, 1), make_model(4, 2));
}

TEST(Train, SeparableToySet) {
  testutil::Rng rng(12);
  const auto data = separable_set(rng, 64);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 8;
  const auto result = train(make_model(1, 5), data, cfg);
  ASSERT_EQ(result.loss_history.size(), 200u);
  EXPECT_LT(result.loss_history.back(), 0.1);
  for (double l : result.loss_history) EXPECT_TRUE(std::isfinite(l));
  for (const auto& w : data) EXPECT_EQ(forward(result.model, w) > 0.5, *w.label);
}

TEST(Train, ZeroEpochsAndDeterminism) {
  testutil::Rng rng(13);
  const auto data = separable_set(rng, 16);
  const auto model = make_model(1, 6);
  TrainConfig zero;
  zero.epochs = 0;
  const auto r0 = train(model, data, zero);
  EXPECT_TRUE(r0.loss_history.empty());
  EXPECT_EQ(r0.model, model);

  TrainConfig cfg;
  cfg.epochs = 3;
  const auto a = train(model, data, cfg);
  const auto b = train(model, data, cfg);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.loss_history, b.loss_history);
}

TEST(Train, TinyLearningRateLeavesParameters) {
  testutil::Rng rng(14);
  const auto data = separable_set(rng, 16);
  auto model = make_model(1, 6);
  model.norm.mean = {-60.0};
  model.norm.stddev = {20.0};
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.learning_rate = 1e-300;
  const auto r = train(model, data, cfg);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    for (std::size_t k = 0; k < model.layers[i].weights.size(); ++k) {
      EXPECT_NEAR(r.model.layers[i].weights[k], model.layers[i].weights[k], 1e-12);
    }
  }
}

TEST(Train, Errors) {
  testutil::Rng rng(15);
  auto data = separable_set(rng, 8);
  for (auto& w : data) w.label = true;
  try {
    train(make_model(1, 1), data, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "degenerate training set");
  }
  auto ok = separable_set(rng, 8);
  TrainConfig bad;
  bad.batch_size = 0;
  EXPECT_THROW(train(make_model(1, 1), ok, bad), Error);
}

TEST(Train, FitsNormalization) {
  testutil::Rng rng(16);
  const auto data = separable_set(rng, 16);
  TrainConfig cfg;
  cfg.epochs = 1;
  const auto r = train(make_model(1, 1), data, cfg);
  ASSERT_TRUE(r.model.norm.fitted());
  double mean = 0.0;
  for (const auto& w : data)
    for (double v : w.values) mean += v;
  mean /= static_cast<double>(data.size() * 240);
  EXPECT_NEAR(r.model.norm.mean[0], mean, 1e-9);
}

TEST(GradientCheck, RandomModels) {
  testutil::Rng rng(17);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto model = make_model(static_cast<int>(seed) + 1, seed);
    for (auto& l : model.layers)
      for (double& b : l.bias) b = rng.normal(0, 0.05);
    const auto w = random_window(rng, seed + 1);
    const auto r = gradient_check(model, w, seed % 2 == 0);
    EXPECT_LT(r.max_relative_error, 1e-4);
    EXPECT_GT(r.checked, 50u);
    EXPECT_EQ(r.per_layer.size(), model.layers.size());
  }
}

TEST(GradientCheck, ZeroModelOutputBias) {
  testutil::Rng rng(18);
  const auto model = make_zero_model(1);
  const auto w = random_window(rng, 1);
  const auto g = backprop(model, w, true);
  // d BCE / d logit at logit 0 with label 1 is 0.5 - 1.
  EXPECT_NEAR(g.bias[8][0], -0.5, 1e-12);
  const auto r = gradient_check(model, w, true);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(GradientCheck, AfterTraining) {
  testutil::Rng rng(19);
  const auto data = separable_set(rng, 16);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;  // 8 steps
  auto trained = train(make_model(1, 3), data, cfg).model;
  cfg.epochs = 1;
  cfg.batch_size = 8;  // 2 more steps
  trained = train(trained, data, cfg).model;
  const auto r = gradient_check(trained, data[0], true);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(PredictStream, LengthAndSingleWindow) {
  testutil::Rng rng(20);
  const auto model = make_model(1, 2);
  const auto series = predict_stream(model, flat_stack(50));
  EXPECT_EQ(series.size(), (50u - 8) / 3 + 1);
  EXPECT_DOUBLE_EQ(series.step_s, 0.375);
  for (std::size_t i = 1; i < series.size(); ++i) {
    EXPECT_NEAR(series.times[i] - series.times[i - 1], 0.375, 1e-12);
  }

  Matrix m(8, 30);
  for (double& v : m.data()) v = rng.uniform(-80, 0);
  const auto stack = stack_channels(MelSpectrogram(m, 0.125, "d", 0.0), 0);
  const auto one = predict_stream(model, stack);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one.probs[0], forward(model, make_windows(stack, {})[0]));
}

TEST(PredictStream, TrainedModelRejectsSilence) {
  testutil::Rng rng(21);
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.learning_rate = 0.05;
  const auto model = train(make_model(1, 7), separable_set(rng, 32), cfg).model;
  const auto series = predict_stream(model, flat_stack(40, 0, -80.0));
  for (double p : series.probs) EXPECT_LT(p, 0.5);
}

TEST(Serialization, RoundTripBitExact) {
  testutil::TempDir dir;
  testutil::Rng rng(22);
  auto model = make_model(2, 9);
  model.norm.mean = {-41.123456789, 0.1};
  model.norm.stddev = {13.3333333333, 1.0 / 3.0};
  save_model(model, dir / "m.json");
  const auto loaded = load_model(dir / "m.json");
  EXPECT_EQ(loaded, model);
  for (int i = 0; i < 100; ++i) {
    const auto w = random_window(rng, 2, 10.0);
    EXPECT_EQ(forward(model, w), forward(loaded, w));
  }
}

TEST(Serialization, Errors) {
  testutil::TempDir dir;
  const auto model = make_model(1, 1);
  const auto text = model_to_json(model);
  {
    std::ofstream out(dir / "trunc.json");
    out << text.substr(0, text.size() / 2);
  }
  try {
    load_model(dir / "trunc.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "corrupt model file");
  }
  auto j = nlohmann::json::parse(text);
  j["version"] = 99;
  try {
    model_from_json(j.dump());
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "unsupported model version");
  }
  auto k = nlohmann::json::parse(text);
  k["layers"][0]["weights"].erase(0);
  EXPECT_THROW(model_from_json(k.dump()), Error);
}

TEST(BalanceWindows, KeepsPositivesAndRatio) {
  std::vector<DetectionWindow> ws(100);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    ws[i].start_time_s = static_cast<double>(i);
    ws[i].label = i % 10 == 0;
  }
  const auto out = balance_windows(ws, 2.0, 1);
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*out[i].label ? pos : neg)++;
    if (i > 0) {
      EXPECT_LT(out[i - 1].start_time_s, out[i].start_time_s);
    }
  }
  EXPECT_EQ(pos, 10u);
  EXPECT_EQ(neg, 20u);
}
