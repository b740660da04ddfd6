#include "noisepair/store.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>

#include "noisepair/error.hpp"
#include "noisepair/frontend.hpp"

namespace noisepair {

using json = nlohmann::json;

const char* to_string(ReviewStatus s) {
  switch (s) {
    case ReviewStatus::pending: return "pending";
    case ReviewStatus::confirmed: return "confirmed";
    case ReviewStatus::rejected: return "rejected";
  }
  return "?";
}

ReviewStatus review_status_from_string(const std::string& s) {
  if (s == "pending") return ReviewStatus::pending;
  if (s == "confirmed" || s == "confirm") return ReviewStatus::confirmed;
  if (s == "rejected" || s == "reject") return ReviewStatus::rejected;
  throw Error("unknown review status: " + s);
}

json to_json(const CandidateEvent& e) {
  json j = {{"id", e.id},
            {"window_start", e.window_start_s},
            {"score", e.score},
            {"branch", e.branch},
            {"source_device", e.source_device},
            {"receiver_device", e.receiver_device},
            {"bundle", e.bundle},
            {"review_status", to_string(e.review_status)},
            {"created_at", e.created_at}};
  j["lag_s"] = e.best_lag_s ? json(*e.best_lag_s) : json(nullptr);
  j["reviewer_note"] = e.reviewer_note ? json(*e.reviewer_note) : json(nullptr);
  j["reviewed_at"] = e.reviewed_at ? json(*e.reviewed_at) : json(nullptr);
  return j;
}

CandidateEvent candidate_from_json(const json& j) {
  CandidateEvent e;
  e.id = j.at("id").get<std::string>();
  e.window_start_s = j.at("window_start").get<double>();
  e.score = j.at("score").get<double>();
  e.branch = j.at("branch").get<std::string>();
  e.source_device = j.value("source_device", "");
  e.receiver_device = j.value("receiver_device", "");
  e.bundle = j.value("bundle", "");
  e.review_status = review_status_from_string(j.value("review_status", "pending"));
  e.created_at = j.value("created_at", "");
  if (j.contains("lag_s") && !j["lag_s"].is_null()) e.best_lag_s = j["lag_s"].get<double>();
  if (j.contains("reviewer_note") && !j["reviewer_note"].is_null()) {
    e.reviewer_note = j["reviewer_note"].get<std::string>();
  }
  if (j.contains("reviewed_at") && !j["reviewed_at"].is_null()) {
    e.reviewed_at = j["reviewed_at"].get<std::string>();
  }
  return e;
}

json to_json(const EventContext& c) {
  return {{"window_start", c.window_start_s},
          {"window_s", c.window_s},
          {"step_s", c.step_s},
          {"source", {{"t", c.source_times}, {"p", c.source_probs}}},
          {"receiver", {{"t", c.receiver_times}, {"p", c.receiver_probs}}},
          {"spectrogram",
           {{"frame_period", c.frame_period_s},
            {"start", c.spectrogram_start_s},
            {"mel_db", c.spectrogram}}}};
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::filesystem::path store_path_from_env(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("NOISEPAIR_STORE"); env && *env) return env;
  return fallback;
}

EventStore::EventStore(std::filesystem::path dir, Clock clock)
    : dir_(std::move(dir)), clock_(clock ? std::move(clock) : Clock(utc_timestamp)) {
  std::filesystem::create_directories(dir_ / "context");
  state_ = std::make_shared<const StoreState>(replay(log_path()));
}

std::shared_ptr<const StoreState> EventStore::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return state_;
}

StoreState EventStore::replay(const std::filesystem::path& log) {
  StoreState state;
  std::ifstream in(log);
  if (!in) return state;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    json r;
    try {
      r = json::parse(line);
    } catch (const json::exception&) {
      throw Error("corrupt store log at line " + std::to_string(number));
    }
    const auto type = r.value("type", "");
    if (type == "candidate") {
      auto e = candidate_from_json(r.at("event"));
      state[e.id] = std::move(e);
    } else if (type == "review") {
      const auto it = state.find(r.at("id").get<std::string>());
      if (it == state.end()) continue;
      it->second.review_status = review_status_from_string(r.at("status").get<std::string>());
      it->second.reviewed_at = r.at("reviewed_at").get<std::string>();
      if (r.contains("note") && !r["note"].is_null()) {
        it->second.reviewer_note = r["note"].get<std::string>();
      }
    } else {
      throw Error("corrupt store log at line " + std::to_string(number));
    }
  }
  return state;
}

std::string EventStore::serialize(const StoreState& state) {
  std::string out;
  for (const auto& [id, e] : state) {
    out += to_json(e).dump();
    out += '\n';
  }
  return out;
}

void EventStore::append(const json& record) {
  std::ofstream out(log_path(), std::ios::app | std::ios::binary);
  if (!out) throw Error("cannot write store log: " + log_path().string());
  out << record.dump() << '\n';
  out.flush();
  if (!out) throw Error("cannot write store log: " + log_path().string());
}

bool EventStore::add_candidate(CandidateEvent event, const EventContext* context) {
  if (event.id.empty()) throw Error("candidate without id");
  if (context && context->frame_period_s < kPrivacyFramePeriodS) {
    throw Error("privacy violation: frame period too small");
  }
  std::lock_guard lock(write_mutex_);
  const auto current = snapshot();
  if (current->count(event.id)) return false;

  event.review_status = ReviewStatus::pending;
  event.reviewed_at.reset();
  event.reviewer_note.reset();
  if (event.created_at.empty()) event.created_at = clock_();

  if (context) {
    std::ofstream out(dir_ / "context" / (event.id + ".json"), std::ios::trunc);
    out << to_json(*context).dump() << '\n';
  }
  append({{"type", "candidate"}, {"event", to_json(event)}});

  auto next = std::make_shared<StoreState>(*current);
  (*next)[event.id] = std::move(event);
  std::lock_guard slock(snapshot_mutex_);
  state_ = std::move(next);
  return true;
}

CandidateEvent EventStore::review(const std::string& id, ReviewStatus decision,
                                  std::optional<std::string> note) {
  if (decision == ReviewStatus::pending) throw Error("invalid decision");
  std::lock_guard lock(write_mutex_);
  const auto current = snapshot();
  const auto it = current->find(id);
  if (it == current->end()) throw NotFoundError("not found");
  if (it->second.review_status != ReviewStatus::pending) throw ConflictError("already reviewed");

  CandidateEvent updated = it->second;
  updated.review_status = decision;
  updated.reviewed_at = clock_();
  if (note) updated.reviewer_note = note;

  json record = {{"type", "review"},
                 {"id", id},
                 {"status", to_string(decision)},
                 {"reviewed_at", *updated.reviewed_at}};
  record["note"] = note ? json(*note) : json(nullptr);
  append(record);

  auto next = std::make_shared<StoreState>(*current);
  (*next)[id] = updated;
  std::lock_guard slock(snapshot_mutex_);
  state_ = std::move(next);
  return updated;
}

std::optional<CandidateEvent> EventStore::find(const std::string& id) const {
  const auto s = snapshot();
  const auto it = s->find(id);
  if (it == s->end()) return std::nullopt;
  return it->second;
}

std::optional<json> EventStore::context(const std::string& id) const {
  if (!find(id)) return std::nullopt;
  std::ifstream in(dir_ / "context" / (id + ".json"));
  if (!in) return json::object();
  std::stringstream buffer;
  buffer << in.rdbuf();
  return json::parse(buffer.str());
}

StoreSummary EventStore::summary() const {
  StoreSummary s;
  for (const auto& [id, e] : *snapshot()) {
    switch (e.review_status) {
      case ReviewStatus::pending: ++s.pending; break;
      case ReviewStatus::confirmed: ++s.confirmed; break;
      case ReviewStatus::rejected: ++s.rejected; break;
    }
  }
  return s;
}

}  // namespace noisepair
