#include "noisepair/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>

#include <nlohmann/json.hpp>

#include "noisepair/error.hpp"

namespace noisepair {

using json = nlohmann::json;

namespace {

struct Frame {
  double t;
  std::vector<double> mel_db;
};

struct DeviceBatch {
  double period = 0.0;
  std::vector<Frame> frames;
};

std::string format_fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

class Hasher {
 public:
  void add(const void* p, std::size_t n) { h_ = fnv1a(p, n, h_); }
  void add(double v) { add(&v, sizeof v); }
  void add(std::int64_t v) { add(&v, sizeof v); }
  void add(const std::string& s) {
    add(static_cast<std::int64_t>(s.size()));
    add(s.data(), s.size());
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

void hash_spectrogram(Hasher& h, const MelSpectrogram& s) {
  h.add(s.device_id());
  h.add(s.start_time_s());
  h.add(s.frame_period_s());
  h.add(static_cast<std::int64_t>(s.n_frames()));
  h.add(static_cast<std::int64_t>(s.n_mels()));
  h.add(s.frames().data().data(), s.n_frames() * s.n_mels() * sizeof(double));
}

MelSpectrogram assemble(const std::string& device, DeviceBatch& batch, IngestResult& result) {
  const double period = batch.period;
  const double t0 = batch.frames.front().t;
  const std::size_t n_mels = batch.frames.front().mel_db.size();
  std::vector<std::vector<double>> rows;
  std::size_t gaps = 0;
  for (auto& f : batch.frames) {
    const auto slot = static_cast<std::size_t>(std::llround((f.t - t0) / period));
    if (slot < rows.size()) {
      ++result.skipped_lines;
      result.warnings.push_back(device + ": duplicate frame at t=" + format_fixed(f.t));
      continue;
    }
    while (rows.size() < slot) {
      rows.emplace_back(n_mels, kDefaultFloorDb);
      ++gaps;
    }
    rows.push_back(std::move(f.mel_db));
  }
  if (gaps > 0) {
    result.warnings.push_back(device + ": filled " + std::to_string(gaps) + " missing frames");
  }
  Matrix m(rows.size(), n_mels);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t b = 0; b < n_mels; ++b) m(r, b) = rows[r][b];
  }
  return MelSpectrogram(std::move(m), period, device, t0);
}

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t hash) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= p[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

IngestResult ingest(std::istream& in) {
  IngestResult result;
  std::map<std::string, DeviceBatch> batches;
  std::string line;
  std::size_t number = 0;
  auto skip = [&](const std::string& why) {
    ++result.skipped_lines;
    result.warnings.push_back("line " + std::to_string(number) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Frame frame;
    std::string device;
    double period = 0.0;
    try {
      const json j = json::parse(line);
      device = j.at("device_id").get<std::string>();
      frame.t = j.at("t").get<double>();
      period = j.at("period").get<double>();
      frame.mel_db = j.at("mel_db").get<std::vector<double>>();
    } catch (const json::exception&) {
      skip("malformed frame");
      continue;
    }
    bool finite = std::isfinite(frame.t) && std::isfinite(period);
    for (const double v : frame.mel_db) finite = finite && std::isfinite(v);
    if (!finite || frame.mel_db.empty() || device.empty() || period <= 0.0) {
      skip("malformed frame");
      continue;
    }
    if (period < kPrivacyFramePeriodS) {
      throw Error("privacy violation: frame period too small (device " + device + ")");
    }
    auto& batch = batches[device];
    if (batch.frames.empty()) {
      batch.period = period;
    } else {
      if (std::abs(period - batch.period) > 1e-9) {
        skip("frame period differs from earlier frames of " + device);
        continue;
      }
      if (frame.mel_db.size() != batch.frames.front().mel_db.size()) {
        skip("mel bin count differs from earlier frames of " + device);
        continue;
      }
      if (frame.t < batch.frames.back().t) {
        throw Error("non-monotonic timestamps (device " + device + ")");
      }
    }
    batch.frames.push_back(std::move(frame));
  }
  for (auto& [device, batch] : batches) {
    result.streams.emplace(device, assemble(device, batch, result));
  }
  return result;
}

IngestResult ingest_files(const std::vector<std::filesystem::path>& paths) {
  IngestResult merged;
  for (const auto& p : paths) {
    std::ifstream in(p);
    if (!in) throw Error("cannot open " + p.string());
    auto r = ingest(in);
    for (auto& [device, spec] : r.streams) {
      if (merged.streams.count(device)) {
        throw Error("device appears in more than one file: " + device);
      }
      merged.streams.emplace(device, std::move(spec));
    }
    merged.skipped_lines += r.skipped_lines;
    for (auto& w : r.warnings) merged.warnings.push_back(p.filename().string() + ": " + w);
  }
  return merged;
}

std::filesystem::path model_path(const std::filesystem::path& models_dir, DeviceRole role,
                                 int order) {
  const char* prefix = role == DeviceRole::source ? "source" : "receiver";
  return models_dir / (std::string(prefix) + "_o" + std::to_string(order) + ".json");
}

PipelineResult run_pipeline(const MelSpectrogram& source, const MelSpectrogram& receiver,
                            const PipelineConfig& cfg, EventStore& store) {
  const auto src_path = model_path(cfg.models_dir, DeviceRole::source, cfg.bundle.source_order);
  const auto rcv_path =
      model_path(cfg.models_dir, DeviceRole::receiver, cfg.bundle.receiver_order);
  if (!std::filesystem::exists(src_path) || !std::filesystem::exists(rcv_path)) {
    throw Error("bundle models not found");
  }
  return run_pipeline(source, receiver, load_model(src_path), load_model(rcv_path), cfg, store);
}

PipelineResult run_pipeline(const MelSpectrogram& source, const MelSpectrogram& receiver,
                            const CnnModel& source_model, const CnnModel& receiver_model,
                            const PipelineConfig& cfg, EventStore& store) {
  cfg.fusion.validate();
  cfg.windowing.validate();
  if (source.frame_period_s() < kPrivacyFramePeriodS ||
      receiver.frame_period_s() < kPrivacyFramePeriodS) {
    throw Error("privacy violation: frame period too small");
  }
  if (source_model.input_channels != cfg.bundle.source_order + 1 ||
      receiver_model.input_channels != cfg.bundle.receiver_order + 1) {
    throw Error("model/input channel mismatch");
  }

  PipelineResult result;
  result.source_predictions =
      predict_stream(source_model, stack_channels(source, cfg.bundle.source_order), cfg.windowing);
  result.receiver_predictions = predict_stream(
      receiver_model, stack_channels(receiver, cfg.bundle.receiver_order), cfg.windowing);
  result.verdicts = fuse_stream(result.source_predictions, result.receiver_predictions, cfg.fusion);

  Hasher inputs;
  hash_spectrogram(inputs, source);
  hash_spectrogram(inputs, receiver);
  inputs.add(model_to_json(source_model));
  inputs.add(model_to_json(receiver_model));
  inputs.add(cfg.bundle.name);
  for (const double v : {cfg.fusion.window_s, cfg.fusion.window_hop_s, cfg.fusion.threshold_source,
                         cfg.fusion.threshold_receiver, cfg.fusion.max_drift_s,
                         cfg.candidate_threshold}) {
    inputs.add(v);
  }
  inputs.add(static_cast<std::int64_t>(cfg.fusion.max_aggregate_fallback));
  inputs.add(static_cast<std::int64_t>(cfg.windowing.window_frames));
  inputs.add(static_cast<std::int64_t>(cfg.windowing.hop_frames));

  const auto& sp = result.source_predictions;
  const auto& rp = result.receiver_predictions;
  for (const auto& v : result.verdicts) {
    if (!(v.score > cfg.candidate_threshold)) continue;
    Hasher id = inputs;
    id.add(format_fixed(v.window_start_s));
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(id.value()));

    CandidateEvent e;
    e.id = hex;
    e.window_start_s = v.window_start_s;
    e.score = v.score;
    e.branch = to_string(v.branch);
    e.best_lag_s = v.best_lag_s;
    e.source_device = source.device_id();
    e.receiver_device = receiver.device_id();
    e.bundle = cfg.bundle.name;

    // Context: both prediction series over the window (each on its own clock,
    // receiver widened by the drift bound) and the receiver spectrogram slice.
    EventContext ctx;
    ctx.window_start_s = v.window_start_s;
    ctx.window_s = cfg.fusion.window_s;
    ctx.step_s = sp.step_s;
    const double w0 = v.window_start_s;
    const double w1 = w0 + cfg.fusion.window_s;
    for (std::size_t i = 0; i < sp.size(); ++i) {
      if (sp.times[i] >= w0 && sp.times[i] < w1) {
        ctx.source_times.push_back(sp.times[i]);
        ctx.source_probs.push_back(sp.probs[i]);
      }
    }
    const double r0 = w0 - cfg.fusion.max_drift_s;
    const double r1 = w1 + cfg.fusion.max_drift_s;
    for (std::size_t i = 0; i < rp.size(); ++i) {
      if (rp.times[i] >= r0 && rp.times[i] < r1) {
        ctx.receiver_times.push_back(rp.times[i]);
        ctx.receiver_probs.push_back(rp.probs[i]);
      }
    }
    ctx.frame_period_s = receiver.frame_period_s();
    const double p = receiver.frame_period_s();
    const auto first = static_cast<std::size_t>(
        std::max(0.0, std::ceil((w0 - receiver.start_time_s()) / p - 1e-9)));
    const auto last = static_cast<std::size_t>(std::max(
        0.0, std::min(static_cast<double>(receiver.n_frames()),
                      std::ceil((w1 - receiver.start_time_s()) / p - 1e-9))));
    ctx.spectrogram_start_s = receiver.frame_time(first);
    ctx.spectrogram.assign(receiver.n_mels(), {});
    for (std::size_t t = first; t < last; ++t) {
      for (std::size_t b = 0; b < receiver.n_mels(); ++b) {
        ctx.spectrogram[b].push_back(receiver.frames()(t, b));
      }
    }

    if (store.add_candidate(e, &ctx)) ++result.added;
    if (auto stored = store.find(e.id)) e = std::move(*stored);
    result.candidates.push_back(std::move(e));
  }
  return result;
}

}  // namespace noisepair
