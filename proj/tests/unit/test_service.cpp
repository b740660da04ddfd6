#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <thread>

#include "noisepair/error.hpp"
#include "noisepair/io.hpp"
#include "noisepair/pipeline.hpp"
#include "noisepair/store.hpp"
#include "noisepair/synth.hpp"
#include "test_util.hpp"

using namespace noisepair;

namespace {

std::string frame_line(const std::string& dev, double t, double period = 0.125, double value = -50) {
  nlohmann::json j = {{"device_id", dev}, {"t", t}, {"period", period}, {"mel_db", std::vector<double>(30, value)}};
  return j.dump() + "\n";
}

EventStore::Clock fixed_clock() {
  auto n = std::make_shared<int>(0);
  return [n] { return "2024-01-01T00:00:" + std::to_string(10 + (*n)++) + "Z"; };
}

CandidateEvent candidate(const std::string& id, double start) {
  CandidateEvent e;
  e.id = id;
  e.window_start_s = start;
  e.score = 0.7;
  e.branch = "cross_correlation";
  e.source_device = "src";
  e.receiver_device = "rcv";
  e.bundle = "one";
  return e;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Ingest, TwoDevices) {
  std::stringstream in;
  for (int i = 0; i < 10; ++i) {
    in << frame_line("a", 0.125 * i);
    if (i < 6) in << frame_line("b", 7.0 + 0.125 * i);
  }
  const auto r = ingest(in);
  ASSERT_EQ(r.streams.size(), 2u);
  EXPECT_EQ(r.streams.at("a").n_frames(), 10u);
  EXPECT_EQ(r.streams.at("b").n_frames(), 6u);
  EXPECT_DOUBLE_EQ(r.streams.at("b").start_time_s(), 7.0);
  EXPECT_EQ(r.skipped_lines, 0u);
}

TEST(Ingest, PrivacyViolationRejectsBatch) {
  std::stringstream in;
  in << frame_line("a", 0.0) << frame_line("b", 0.0, 0.05);
  try {
    ingest(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("privacy violation: frame period too small"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("b"), std::string::npos);
  }
}

TEST(Ingest, NonMonotonic) {
  std::stringstream in;
  in << frame_line("x", 0.0) << frame_line("dev7", 1.0) << frame_line("dev7", 0.5);
  try {
    ingest(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("non-monotonic timestamps"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("dev7"), std::string::npos);
  }
}

TEST(Ingest, MalformedLinesSkippedAndGapsFilled) {
  std::stringstream in;
  in << frame_line("a", 0.0) << "{not json\n"
     << R"({"device_id": "a", "t": 0.125})" << "\n"
     << frame_line("a", 0.125) << frame_line("a", 0.5) << frame_line("a", 0.5);
  const auto r = ingest(in);
  EXPECT_EQ(r.skipped_lines, 3u);  // two malformed, one duplicate timestamp
  const auto& s = r.streams.at("a");
  ASSERT_EQ(s.n_frames(), 5u);
  EXPECT_DOUBLE_EQ(s.frames()(2, 0), kDefaultFloorDb);
  EXPECT_DOUBLE_EQ(s.frames()(4, 0), -50);
}

TEST(Store, AddReviewReplay) {
  testutil::TempDir dir;
  EventStore store(dir.path(), fixed_clock());
  EXPECT_TRUE(store.add_candidate(candidate("c1", 0)));
  EXPECT_FALSE(store.add_candidate(candidate("c1", 0)));
  EXPECT_TRUE(store.add_candidate(candidate("c2", 13)));

  const auto reviewed = store.review("c1", ReviewStatus::confirmed, "gunshot");
  EXPECT_EQ(reviewed.review_status, ReviewStatus::confirmed);
  ASSERT_TRUE(reviewed.reviewed_at.has_value());
  EXPECT_EQ(*reviewed.reviewer_note, "gunshot");
  try {
    store.review("c1", ReviewStatus::rejected);
    FAIL();
  } catch (const ConflictError& e) {
    EXPECT_STREQ(e.what(), "already reviewed");
  }
  try {
    store.review("zz", ReviewStatus::rejected);
    FAIL();
  } catch (const NotFoundError& e) {
    EXPECT_STREQ(e.what(), "not found");
  }
  store.review("c2", ReviewStatus::rejected);

  EventStore reopened(dir.path());
  EXPECT_EQ(EventStore::serialize(*reopened.snapshot()), EventStore::serialize(*store.snapshot()));
  EXPECT_EQ(reopened.find("c2")->review_status, ReviewStatus::rejected);
  const auto s = reopened.summary();
  EXPECT_EQ(s.confirmed, 1u);
  EXPECT_EQ(s.rejected, 1u);
  EXPECT_EQ(s.pending, 0u);
}

TEST(Store, ReviewedAtIffNotPendingProperty) {
  testutil::TempDir dir;
  EventStore store(dir.path(), fixed_clock());
  testutil::Rng rng(3);
  for (int i = 0; i < 60; ++i) store.add_candidate(candidate("e" + std::to_string(i), i));
  for (int i = 0; i < 200; ++i) {
    const auto id = "e" + std::to_string(rng.integer(0, 59));
    try {
      store.review(id, rng.coin() ? ReviewStatus::confirmed : ReviewStatus::rejected);
    } catch (const ConflictError&) {
    }
  }
  const auto state = EventStore(dir.path()).snapshot();
  for (const auto& [id, e] : *state) {
    EXPECT_EQ(e.reviewed_at.has_value(), e.review_status != ReviewStatus::pending);
  }
}

TEST(Store, ConcurrentReviewsFirstWins) {
  testutil::TempDir dir;
  EventStore store(dir.path());
  for (int i = 0; i < 20; ++i) store.add_candidate(candidate("e" + std::to_string(i), i));
  std::atomic<int> wins{0}, conflicts{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 20; ++i) {
        try {
          store.review("e" + std::to_string(i), t % 2 ? ReviewStatus::confirmed : ReviewStatus::rejected);
          ++wins;
        } catch (const ConflictError&) {
          ++conflicts;
        }
        // Readers run against snapshots while writers are active.
        EXPECT_EQ(store.snapshot()->size(), 20u);
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(wins.load(), 20);
  EXPECT_EQ(conflicts.load(), 60);
  std::ifstream log(store.log_path());
  int reviews = 0;
  std::string line;
  while (std::getline(log, line)) reviews += line.find("\"type\":\"review\"") != std::string::npos;
  EXPECT_EQ(reviews, 20);
}

TEST(Store, LaterRecordsSupersede) {
  testutil::TempDir dir;
  {
    std::ofstream log(dir / "events.jsonl");
    auto a = candidate("x", 0);
    a.score = 0.2;
    log << nlohmann::json{{"type", "candidate"}, {"event", to_json(a)}}.dump() << "\n";
    a.score = 0.9;
    log << nlohmann::json{{"type", "candidate"}, {"event", to_json(a)}}.dump() << "\n";
  }
  EXPECT_DOUBLE_EQ(EventStore(dir.path()).find("x")->score, 0.9);
}

TEST(Store, ContextPrivacyGate) {
  testutil::TempDir dir;
  EventStore store(dir.path());
  EventContext ctx;
  ctx.frame_period_s = 0.05;
  EXPECT_THROW(store.add_candidate(candidate("p", 0), &ctx), Error);
  EXPECT_FALSE(store.find("p").has_value());
}

class PipelineTest : public ::testing::Test {
 protected:
  static Scenario scenario() {
    ScenarioConfig cfg;
    cfg.n_events = 3;
    cfg.tail_s = 10;
    cfg.clock_offset_s = 2;
    return generate(cfg);
  }

  // Zero-weight models whose output is sigmoid(bias) everywhere.
  static CnnModel biased(int channels, double bias) {
    auto m = make_zero_model(channels);
    m.layers[8].bias = {bias};
    return m;
  }
};

TEST_F(PipelineTest, IdempotentRerun) {
  testutil::TempDir dir;
  const auto s = scenario();
  PipelineConfig cfg;
  EventStore store(dir / "store", fixed_clock());
  const auto src_model = biased(4, 3.0);
  const auto rcv_model = biased(1, -3.0);
  const auto first = run_pipeline(s.source, s.receiver, src_model, rcv_model, cfg, store);
  ASSERT_GT(first.added, 0u);
  const auto log_before = read_file(store.log_path());
  const auto second = run_pipeline(s.source, s.receiver, src_model, rcv_model, cfg, store);
  EXPECT_EQ(second.added, 0u);
  EXPECT_EQ(read_file(store.log_path()), log_before);
  ASSERT_EQ(first.candidates.size(), second.candidates.size());
  for (std::size_t i = 0; i < first.candidates.size(); ++i) {
    EXPECT_EQ(first.candidates[i].id, second.candidates[i].id);
    EXPECT_GT(first.candidates[i].score, cfg.candidate_threshold);
    EXPECT_EQ(first.candidates[i].review_status, ReviewStatus::pending);
    const auto ctx = store.context(first.candidates[i].id);
    ASSERT_TRUE(ctx.has_value());
    EXPECT_EQ((*ctx)["spectrogram"]["mel_db"].size(), 30u);
    EXPECT_DOUBLE_EQ((*ctx)["spectrogram"]["frame_period"].get<double>(), 0.125);
  }

  // Different config hash gives different ids.
  PipelineConfig other = cfg;
  other.candidate_threshold = 0.4;
  const auto third = run_pipeline(s.source, s.receiver, src_model, rcv_model, other, store);
  EXPECT_NE(third.candidates.front().id, first.candidates.front().id);
}

TEST_F(PipelineTest, SilentStreamsGiveNoCandidates) {
  testutil::TempDir dir;
  EventStore store(dir.path());
  MelSpectrogram silent(Matrix(400, 30, -80.0), 0.125, "src", 0.0);
  MelSpectrogram silent_r(Matrix(400, 30, -80.0), 0.125, "rcv", 0.0);
  // Source model with a strongly negative output bias stays below the gate.
  const auto r = run_pipeline(silent, silent_r, biased(4, -8.0), biased(1, -8.0), {}, store);
  EXPECT_TRUE(r.candidates.empty());
  EXPECT_TRUE(store.snapshot()->empty());
}

TEST_F(PipelineTest, MissingModels) {
  testutil::TempDir dir;
  const auto s = scenario();
  EventStore store(dir / "store");
  PipelineConfig cfg;
  cfg.models_dir = dir / "models";
  try {
    run_pipeline(s.source, s.receiver, cfg, store);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "bundle models not found");
  }
  std::filesystem::create_directories(cfg.models_dir);
  save_model(biased(4, 3.0), model_path(cfg.models_dir, DeviceRole::source, 3));
  EXPECT_THROW(run_pipeline(s.source, s.receiver, cfg, store), Error);
  save_model(biased(1, -3.0), model_path(cfg.models_dir, DeviceRole::receiver, 0));
  EXPECT_GT(run_pipeline(s.source, s.receiver, cfg, store).candidates.size(), 0u);
  EXPECT_EQ(model_path("m", DeviceRole::receiver, 1).filename(), "receiver_o1.json");
}

TEST(StoreEnv, PathFromEnvironment) {
  ::setenv("NOISEPAIR_STORE", "/tmp/somewhere", 1);
  EXPECT_EQ(store_path_from_env("x"), "/tmp/somewhere");
  ::unsetenv("NOISEPAIR_STORE");
  EXPECT_EQ(store_path_from_env("x"), "x");
}
