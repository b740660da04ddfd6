#include <gtest/gtest.h>

#include <sstream>

#include "noisepair/error.hpp"
#include "noisepair/io.hpp"
#include "noisepair/pipeline.hpp"

using namespace noisepair;

TEST(Io, PredictionsRoundTrip) {
  PredictionSeries s;
  s.device_id = "rcv";
  s.step_s = 0.375;
  s.times = {1.0, 1.375, 1.75};
  s.probs = {0.1, 0.123456789012345678, 0.9};
  std::stringstream buf;
  write_predictions_jsonl(s, buf);
  const auto r = read_predictions_jsonl(buf);
  EXPECT_EQ(r.device_id, "rcv");
  EXPECT_EQ(r.times, s.times);
  EXPECT_EQ(r.probs, s.probs);
  EXPECT_DOUBLE_EQ(r.step_s, 0.375);
}

TEST(Io, LabelsAndTruth) {
  std::stringstream buf;
  buf << R"({"start": 1.0, "end": 1.5, "audibility": "faint"})" << "\n\n"
      << R"({"start": 3.0, "end": 3.25})" << "\n";
  const auto labels = read_labels_jsonl(buf);
  ASSERT_EQ(labels.size(), 2u);
  EXPECT_EQ(labels[0].audibility, Audibility::faint);
  EXPECT_FALSE(labels[1].audibility.has_value());

  TruthEvent t;
  t.label = EventLabel(5, 5.1, Audibility::clear, Origin::interferer);
  t.receiver_start_s = 8;
  t.receiver_end_s = 8.1;
  std::stringstream tb;
  write_truth_jsonl({t}, tb);
  const auto back = read_truth_jsonl(tb);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].label, t.label);
  EXPECT_DOUBLE_EQ(back[0].receiver_start_s, 8);

  std::stringstream bad(R"({"start": 1.0, "end": )");
  EXPECT_THROW(read_labels_jsonl(bad), Error);
}

TEST(Io, VerdictsRoundTrip) {
  std::vector<FusionVerdict> v{{0, 0, FusionBranch::no_source_activity, std::nullopt},
                               {13, 0.7, FusionBranch::cross_correlation, -1.125}};
  std::stringstream buf;
  write_verdicts_jsonl(v, buf);
  EXPECT_NE(buf.str().find("\"lag_s\":null"), std::string::npos);
  const auto r = read_verdicts_jsonl(buf);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[1].branch, FusionBranch::cross_correlation);
  EXPECT_DOUBLE_EQ(*r[1].best_lag_s, -1.125);
  EXPECT_FALSE(r[0].best_lag_s.has_value());
}

TEST(Io, SpectrogramStreamRoundTripThroughIngest) {
  Matrix m(5, 30);
  for (std::size_t i = 0; i < m.data().size(); ++i) m.data()[i] = -80.0 + 0.37 * static_cast<double>(i % 200);
  MelSpectrogram spec(m, 0.125, "src", 12.5);
  std::stringstream buf;
  write_spectrogram_jsonl(spec, buf);
  const auto r = ingest(buf);
  ASSERT_EQ(r.streams.count("src"), 1u);
  EXPECT_EQ(r.streams.at("src"), spec);
}

TEST(Io, ScenarioJson) {
  ScenarioConfig c;
  c.n_events = 7;
  c.clock_offset_s = -3;
  c.receiver_device = "r2";
  const auto back = scenario_from_json(scenario_to_json(c));
  EXPECT_EQ(back.n_events, 7);
  EXPECT_EQ(back.clock_offset_s, -3);
  EXPECT_EQ(back.receiver_device, "r2");
  EXPECT_THROW(scenario_from_json(nlohmann::json{{"n_event", 3}}), Error);
  EXPECT_THROW(scenario_from_json(nlohmann::json{{"clock_offset_s", 20}}), Error);
  EXPECT_EQ(scenario_from_json(nlohmann::json::object()).n_events, ScenarioConfig{}.n_events);
}
