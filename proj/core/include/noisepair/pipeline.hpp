#pragma once

// Ingest of per-device spectrogram streams and the detect -> fuse -> persist run.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "noisepair/detector.hpp"
#include "noisepair/fusion.hpp"
#include "noisepair/store.hpp"

namespace noisepair {

struct IngestResult {
  std::map<std::string, MelSpectrogram> streams;
  std::size_t skipped_lines = 0;
  std::vector<std::string> warnings;
};

// Parses JSONL spectrogram frames ({"device_id","t","period","mel_db"}).
// Malformed lines are skipped and counted. Each device gets its own stream;
// frames are placed on the device's period grid and gaps are filled with
// floor frames. Throws on a period below the privacy floor or on decreasing
// timestamps within a device; the message names the device.
IngestResult ingest(std::istream& in);
IngestResult ingest_files(const std::vector<std::filesystem::path>& paths);

enum class DeviceRole { source, receiver };

// <dir>/source_o3.json, <dir>/receiver_o0.json, ...
std::filesystem::path model_path(const std::filesystem::path& models_dir, DeviceRole role,
                                 int order);

struct PipelineConfig {
  BundleSpec bundle = bundled_one();
  FusionConfig fusion;
  WindowingConfig windowing;
  double candidate_threshold = 0.5;
  std::filesystem::path models_dir = "models";
};

struct PipelineResult {
  PredictionSeries source_predictions;
  PredictionSeries receiver_predictions;
  std::vector<FusionVerdict> verdicts;
  std::vector<CandidateEvent> candidates;  // every window above threshold
  std::size_t added = 0;                   // of which new to the store
};

// Loads the bundle's models from cfg.models_dir; throws "bundle models not
// found" when either file is missing.
PipelineResult run_pipeline(const MelSpectrogram& source, const MelSpectrogram& receiver,
                            const PipelineConfig& cfg, EventStore& store);

PipelineResult run_pipeline(const MelSpectrogram& source, const MelSpectrogram& receiver,
                            const CnnModel& source_model, const CnnModel& receiver_model,
                            const PipelineConfig& cfg, EventStore& store);

// 64-bit FNV-1a.
std::uint64_t fnv1a(const void* data, std::size_t size,
                    std::uint64_t hash = 0xcbf29ce484222325ULL);

}  // namespace noisepair
