#pragma once

// JSON Lines file formats.
//
//   spectrogram frame  {"device_id", "t", "period", "mel_db": [...]}
//   prediction         {"device_id", "t", "p", "step"}
//   label              {"start", "end", "audibility"}
//   truth              label fields + "origin", "receiver_start", "receiver_end"
//   verdict            {"window_start", "score", "branch", "lag_s"}

#include <filesystem>
#include <istream>
#include <ostream>
#include <vector>

#include <nlohmann/json.hpp>

#include "noisepair/detector.hpp"
#include "noisepair/frontend.hpp"
#include "noisepair/fusion.hpp"
#include "noisepair/labels.hpp"
#include "noisepair/synth.hpp"

namespace noisepair {

void write_spectrogram_jsonl(const MelSpectrogram& spec, std::ostream& out);

void write_predictions_jsonl(const PredictionSeries& series, std::ostream& out);
PredictionSeries read_predictions_jsonl(std::istream& in);

void write_labels_jsonl(const std::vector<EventLabel>& labels, std::ostream& out);
std::vector<EventLabel> read_labels_jsonl(std::istream& in);

void write_truth_jsonl(const std::vector<TruthEvent>& events, std::ostream& out);
std::vector<TruthEvent> read_truth_jsonl(std::istream& in);

void write_verdicts_jsonl(const std::vector<FusionVerdict>& verdicts, std::ostream& out);
std::vector<FusionVerdict> read_verdicts_jsonl(std::istream& in);

// Scenario config as a flat JSON object keyed by field name. Missing keys keep
// their defaults; unknown keys are rejected.
nlohmann::json scenario_to_json(const ScenarioConfig& cfg);
ScenarioConfig scenario_from_json(const nlohmann::json& j);

}  // namespace noisepair
