#include "noisepair/io.hpp"

#include <string>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "noisepair/error.hpp"

namespace noisepair {

namespace {

using json = nlohmann::json;

template <typename F>
void for_each_line(std::istream& in, const char* what, F&& f) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      f(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(std::string("malformed ") + what + " line " + std::to_string(number) + ": " +
                  e.what());
    }
  }
}

}  // namespace

void write_spectrogram_jsonl(const MelSpectrogram& spec, std::ostream& out) {
  for (std::size_t i = 0; i < spec.n_frames(); ++i) {
    const auto row = spec.frames().row(i);
    json j = {{"device_id", spec.device_id()},
              {"t", spec.frame_time(i)},
              {"period", spec.frame_period_s()},
              {"mel_db", std::vector<double>(row.begin(), row.end())}};
    out << j.dump() << '\n';
  }
}

void write_predictions_jsonl(const PredictionSeries& series, std::ostream& out) {
  for (std::size_t i = 0; i < series.size(); ++i) {
    out << json{{"device_id", series.device_id},
                {"t", series.times[i]},
                {"p", series.probs[i]},
                {"step", series.step_s}}
               .dump()
        << '\n';
  }
}

PredictionSeries read_predictions_jsonl(std::istream& in) {
  PredictionSeries s;
  bool first = true;
  for_each_line(in, "prediction", [&](const json& j) {
    const auto device = j.at("device_id").get<std::string>();
    const double step = j.at("step").get<double>();
    if (first) {
      s.device_id = device;
      s.step_s = step;
      first = false;
    } else if (device != s.device_id || std::abs(step - s.step_s) > 1e-9) {
      throw Error("prediction file mixes devices or steps");
    }
    const double t = j.at("t").get<double>();
    if (!s.times.empty() && !(t > s.times.back())) throw Error("non-monotonic timestamps");
    s.times.push_back(t);
    s.probs.push_back(j.at("p").get<double>());
  });
  return s;
}

namespace {

json label_json(const EventLabel& l) {
  json j = {{"start", l.start_s}, {"end", l.end_s}};
  j["audibility"] = l.audibility ? json(to_string(*l.audibility)) : json(nullptr);
  return j;
}

EventLabel label_from_json(const json& j) {
  std::optional<Audibility> a;
  if (j.contains("audibility") && !j.at("audibility").is_null()) {
    a = audibility_from_string(j.at("audibility").get<std::string>());
  }
  Origin o = Origin::source;
  if (j.contains("origin")) o = origin_from_string(j.at("origin").get<std::string>());
  return EventLabel(j.at("start").get<double>(), j.at("end").get<double>(), a, o);
}

}  // namespace

void write_labels_jsonl(const std::vector<EventLabel>& labels, std::ostream& out) {
  for (const auto& l : labels) out << label_json(l).dump() << '\n';
}

std::vector<EventLabel> read_labels_jsonl(std::istream& in) {
  std::vector<EventLabel> out;
  for_each_line(in, "label", [&](const json& j) { out.push_back(label_from_json(j)); });
  return out;
}

void write_truth_jsonl(const std::vector<TruthEvent>& events, std::ostream& out) {
  for (const auto& e : events) {
    json j = label_json(e.label);
    j["origin"] = to_string(e.label.origin);
    j["receiver_start"] = e.receiver_start_s;
    j["receiver_end"] = e.receiver_end_s;
    out << j.dump() << '\n';
  }
}

std::vector<TruthEvent> read_truth_jsonl(std::istream& in) {
  std::vector<TruthEvent> out;
  for_each_line(in, "truth", [&](const json& j) {
    TruthEvent e;
    e.label = label_from_json(j);
    e.receiver_start_s = j.value("receiver_start", e.label.start_s);
    e.receiver_end_s = j.value("receiver_end", e.label.end_s);
    out.push_back(e);
  });
  return out;
}

void write_verdicts_jsonl(const std::vector<FusionVerdict>& verdicts, std::ostream& out) {
  for (const auto& v : verdicts) {
    json j = {{"window_start", v.window_start_s}, {"score", v.score}, {"branch", to_string(v.branch)}};
    j["lag_s"] = v.best_lag_s ? json(*v.best_lag_s) : json(nullptr);
    out << j.dump() << '\n';
  }
}

std::vector<FusionVerdict> read_verdicts_jsonl(std::istream& in) {
  std::vector<FusionVerdict> out;
  for_each_line(in, "verdict", [&](const json& j) {
    FusionVerdict v;
    v.window_start_s = j.at("window_start").get<double>();
    v.score = j.at("score").get<double>();
    v.branch = fusion_branch_from_string(j.at("branch").get<std::string>());
    if (j.contains("lag_s") && !j.at("lag_s").is_null()) v.best_lag_s = j.at("lag_s").get<double>();
    out.push_back(v);
  });
  return out;
}

namespace {

template <typename Visitor>
void visit_fields(Visitor&& v, ScenarioConfig& c) {
  v("n_events", c.n_events);
  v("event_spacing_s", c.event_spacing_s);
  v("group_size", c.group_size);
  v("group_gap_s", c.group_gap_s);
  v("first_onset_s", c.first_onset_s);
  v("tail_s", c.tail_s);
  v("background_rms", c.background_rms);
  v("source_snr_db", c.source_snr_db);
  v("receiver_snr_db", c.receiver_snr_db);
  v("interferer_snr_db", c.interferer_snr_db);
  v("propagation_delay_s", c.propagation_delay_s);
  v("clock_offset_s", c.clock_offset_s);
  v("p_not_heard", c.p_not_heard);
  v("p_faint", c.p_faint);
  v("p_weak", c.p_weak);
  v("weak_drop_db", c.weak_drop_db);
  v("n_interferers", c.n_interferers);
  v("min_burst_s", c.min_burst_s);
  v("max_burst_s", c.max_burst_s);
  v("seed", c.seed);
  v("source_device", c.source_device);
  v("receiver_device", c.receiver_device);
}

}  // namespace

json scenario_to_json(const ScenarioConfig& cfg) {
  json j = json::object();
  auto copy = cfg;
  visit_fields([&j](const char* key, const auto& value) { j[key] = value; }, copy);
  return j;
}

ScenarioConfig scenario_from_json(const json& j) {
  if (!j.is_object()) throw Error("invalid scenario");
  ScenarioConfig cfg;
  std::size_t known = 0;
  try {
    visit_fields(
        [&](const char* key, auto& value) {
          if (!j.contains(key)) return;
          ++known;
          value = j.at(key).get<std::decay_t<decltype(value)>>();
        },
        cfg);
  } catch (const json::exception& e) {
    throw Error(std::string("invalid scenario: ") + e.what());
  }
  if (known != j.size()) throw Error("invalid scenario: unknown key");
  cfg.validate();
  return cfg;
}

}  // namespace noisepair
