#pragma once

// Append-only, file-backed store of candidate events and their reviews.
//
// Layout of a store directory:
//   events.jsonl        one record per line: candidate or review transition
//   context/<id>.json   prediction windows and spectrogram slice per candidate
//
// The in-memory state is a pure function of events.jsonl. Writers are
// serialised; readers work on immutable snapshots.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace noisepair {

enum class ReviewStatus { pending, confirmed, rejected };

const char* to_string(ReviewStatus s);
ReviewStatus review_status_from_string(const std::string& s);

struct CandidateEvent {
  std::string id;
  double window_start_s = 0.0;
  double score = 0.0;
  std::string branch;
  std::optional<double> best_lag_s;
  std::string source_device;
  std::string receiver_device;
  std::string bundle;
  ReviewStatus review_status = ReviewStatus::pending;
  std::optional<std::string> reviewer_note;
  std::string created_at;
  std::optional<std::string> reviewed_at;
};

nlohmann::json to_json(const CandidateEvent& e);
CandidateEvent candidate_from_json(const nlohmann::json& j);

// What the review UI shows for one candidate.
struct EventContext {
  double window_start_s = 0.0;
  double window_s = 26.0;
  double step_s = 0.375;
  std::vector<double> source_times;
  std::vector<double> source_probs;
  std::vector<double> receiver_times;
  std::vector<double> receiver_probs;
  double frame_period_s = 0.125;
  double spectrogram_start_s = 0.0;
  std::vector<std::vector<double>> spectrogram;  // [n_mels][n_frames] dB
};

nlohmann::json to_json(const EventContext& c);

using StoreState = std::map<std::string, CandidateEvent>;

struct StoreSummary {
  std::size_t pending = 0;
  std::size_t confirmed = 0;
  std::size_t rejected = 0;
};

class EventStore {
 public:
  using Clock = std::function<std::string()>;

  // Opens (creating if needed) the store directory and replays its log.
  explicit EventStore(std::filesystem::path dir, Clock clock = {});

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path log_path() const { return dir_ / "events.jsonl"; }

  std::shared_ptr<const StoreState> snapshot() const;

  // Appends a pending candidate unless its id already exists. Returns true
  // when the candidate was added.
  bool add_candidate(CandidateEvent event, const EventContext* context = nullptr);

  // pending -> confirmed | rejected. Throws NotFoundError / ConflictError.
  CandidateEvent review(const std::string& id, ReviewStatus decision,
                        std::optional<std::string> note = std::nullopt);

  std::optional<CandidateEvent> find(const std::string& id) const;
  std::optional<nlohmann::json> context(const std::string& id) const;
  StoreSummary summary() const;

  // Rebuilds state from a log file.
  static StoreState replay(const std::filesystem::path& log);
  // Canonical serialisation of a state (sorted by id).
  static std::string serialize(const StoreState& state);

 private:
  void append(const nlohmann::json& record);

  std::filesystem::path dir_;
  Clock clock_;
  std::mutex write_mutex_;
  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const StoreState> state_;
};

// Store directory from NOISEPAIR_STORE, or `fallback` when unset.
std::filesystem::path store_path_from_env(const std::filesystem::path& fallback);

std::string utc_timestamp();

}  // namespace noisepair
