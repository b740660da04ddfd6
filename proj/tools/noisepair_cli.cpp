// noisepair command line: synth | label | train | predict | fuse | eval | pipeline | serve

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "json_config.hpp"
#include "noisepair/detector.hpp"
#include "noisepair/error.hpp"
#include "noisepair/evaluation.hpp"
#include "noisepair/fusion.hpp"
#include "noisepair/http_api.hpp"
#include "noisepair/io.hpp"
#include "noisepair/labeler.hpp"
#include "noisepair/pipeline.hpp"
#include "noisepair/store.hpp"
#include "noisepair/synth.hpp"

namespace fs = std::filesystem;
using namespace noisepair;

namespace {

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  return in;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

// Reads a spectrogram stream file and picks one device (the only one when
// `device` is empty).
MelSpectrogram load_stream(const fs::path& path, const std::string& device) {
  auto result = ingest_files({path});
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  if (result.streams.empty()) throw Error("no frames in " + path.string());
  if (device.empty()) {
    if (result.streams.size() != 1) {
      throw Error(path.string() + " holds several devices; pass --device");
    }
    return result.streams.begin()->second;
  }
  const auto it = result.streams.find(device);
  if (it == result.streams.end()) throw Error("device not found: " + device);
  return it->second;
}

void print_curve(const char* label, const PrCurve& c) {
  std::printf("%-10s AP=%.4f  optimal F1=%.4f at threshold %.4f  R@P0.8=%.4f\n", label, c.ap,
              c.optimal_f1, c.optimal_threshold, recall_at_precision(c, 0.8));
}

// ---- synth ----
struct SynthArgs {
  fs::path config;
  fs::path out = "synth_out";
  std::optional<std::uint64_t> seed;
  std::optional<int> events;
  std::optional<double> clock_offset;
};

void run_synth(const SynthArgs& a) {
  ScenarioConfig cfg;
  if (!a.config.empty()) {
    auto in = open_in(a.config);
    cfg = scenario_from_json(nlohmann::json::parse(in));
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.events) cfg.n_events = *a.events;
  if (a.clock_offset) cfg.clock_offset_s = *a.clock_offset;
  cfg.validate();

  const auto scenario = generate(cfg);
  fs::create_directories(a.out);
  {
    auto out = open_out(a.out / "source.jsonl");
    write_spectrogram_jsonl(scenario.source, out);
  }
  {
    auto out = open_out(a.out / "receiver.jsonl");
    write_spectrogram_jsonl(scenario.receiver, out);
  }
  {
    auto out = open_out(a.out / "truth.jsonl");
    write_truth_jsonl(scenario.truth.events, out);
  }
  {
    auto out = open_out(a.out / "source_labels.jsonl");
    write_labels_jsonl(scenario.truth.source_labels(), out);
  }
  {
    auto out = open_out(a.out / "receiver_labels.jsonl");
    write_labels_jsonl(scenario.truth.receiver_labels(), out);
  }
  {
    auto out = open_out(a.out / "scenario.json");
    out << scenario_to_json(cfg).dump(2) << '\n';
  }
  std::printf("wrote %zu source frames, %zu receiver frames, %zu truth events to %s\n",
              scenario.source.n_frames(), scenario.receiver.n_frames(),
              scenario.truth.events.size(), a.out.string().c_str());
}

// ---- label ----
struct LabelArgs {
  fs::path stream;
  std::string device;
  fs::path out = "labels.jsonl";
  std::string audibility = "clear";
  double tol = 1e-6;
  int max_iter = 200;
  std::uint64_t seed = 1;
};

void run_label(const LabelArgs& a) {
  const auto spec = load_stream(a.stream, a.device);
  const auto levels = level_series(spec);
  const auto fitted = fit(levels, a.tol, a.max_iter, a.seed);
  const auto path = decode(fitted.hmm, levels);
  auto labels = segments(path, spec.frame_period_s(), spec.start_time_s());
  const auto aud = audibility_from_string(a.audibility);
  for (auto& l : labels) l.audibility = aud;
  auto out = open_out(a.out);
  write_labels_jsonl(labels, out);
  std::printf("%zu events; means %.2f / %.2f dB after %d iterations\n", labels.size(),
              fitted.hmm.mean[0], fitted.hmm.mean[1], fitted.iterations);
}

// ---- train ----
struct TrainArgs {
  fs::path stream;
  std::string device;
  fs::path labels;
  int order = 0;
  fs::path out = "model.json";
  TrainConfig train;
  double negatives_per_positive = 0.0;  // 0 keeps every window
};

void run_train(const TrainArgs& a) {
  const auto spec = load_stream(a.stream, a.device);
  auto in = open_in(a.labels);
  const auto labels = read_labels_jsonl(in);
  const auto stack = stack_channels(spec, a.order);
  auto windows = make_windows(stack, WindowingConfig{}, &labels);
  if (a.negatives_per_positive > 0.0) {
    windows = balance_windows(windows, a.negatives_per_positive, a.train.seed);
  }
  auto result = train(make_model(a.order + 1, a.train.seed), windows, a.train);
  save_model(result.model, a.out);
  for (std::size_t e = 0; e < result.loss_history.size(); ++e) {
    std::printf("epoch %zu loss %.5f\n", e + 1, result.loss_history[e]);
  }
}

// ---- predict ----
struct PredictArgs {
  fs::path stream;
  std::string device;
  fs::path model;
  fs::path out = "predictions.jsonl";
};

void run_predict(const PredictArgs& a) {
  const auto spec = load_stream(a.stream, a.device);
  const auto model = load_model(a.model);
  const auto series = predict_stream(model, stack_channels(spec, model.input_channels - 1));
  auto out = open_out(a.out);
  write_predictions_jsonl(series, out);
  std::printf("%zu predictions\n", series.size());
}

// ---- fuse ----
struct FuseArgs {
  fs::path src;
  fs::path rcv;
  std::string bundle = "one";
  int rcv_order = -1;
  int src_order = -1;
  FusionConfig fusion;
  fs::path out = "verdicts.jsonl";
};

void run_fuse(const FuseArgs& a) {
  // Bundle orders are fixed when the prediction series were produced; the
  // name is validated so scripts fail early on typos.
  bundle_by_name(a.bundle, a.rcv_order, a.src_order);
  auto src_in = open_in(a.src);
  auto rcv_in = open_in(a.rcv);
  const auto src = read_predictions_jsonl(src_in);
  const auto rcv = read_predictions_jsonl(rcv_in);
  const auto verdicts = fuse_stream(src, rcv, a.fusion);
  auto out = open_out(a.out);
  write_verdicts_jsonl(verdicts, out);
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& v : verdicts) ++counts[static_cast<int>(v.branch)];
  std::printf("%zu windows: %zu no source activity, %zu receiver confident, %zu cross-correlation\n",
              verdicts.size(), counts[0], counts[1], counts[2]);
}

// ---- eval ----
struct EvalArgs {
  fs::path verdicts;
  fs::path truth;
  fs::path rcv_predictions;
  fs::path predictions;
  fs::path labels;
  double window_s = 26.0;
  fs::path pr_csv;
};

void run_eval(const EvalArgs& a) {
  PrCurve main_curve;
  if (!a.verdicts.empty()) {
    if (a.truth.empty()) throw Error("--verdicts needs --truth");
    auto vin = open_in(a.verdicts);
    auto tin = open_in(a.truth);
    const auto verdicts = read_verdicts_jsonl(vin);
    const auto truth = read_truth_jsonl(tin);
    const auto samples = evaluate_verdicts(verdicts, truth, a.window_s);
    main_curve = pr_curve(samples);
    print_curve("fused", main_curve);
    if (!a.rcv_predictions.empty()) {
      auto rin = open_in(a.rcv_predictions);
      const auto rcv = read_predictions_jsonl(rin);
      print_curve("receiver", pr_curve(receiver_only_samples(rcv, verdicts, truth, a.window_s)));
    }
  } else if (!a.predictions.empty()) {
    if (a.labels.empty()) throw Error("--predictions needs --labels");
    auto pin = open_in(a.predictions);
    auto lin = open_in(a.labels);
    const auto series = read_predictions_jsonl(pin);
    const auto labels = read_labels_jsonl(lin);
    main_curve = pr_curve(detector_samples(series, labels));
    print_curve("detector", main_curve);
  } else {
    throw Error("pass --verdicts/--truth or --predictions/--labels");
  }
  if (!a.pr_csv.empty()) {
    auto out = open_out(a.pr_csv);
    write_pr_csv(main_curve, out);
  }
}

// ---- pipeline ----
struct PipelineArgs {
  std::vector<fs::path> streams;
  std::string src_device = "source";
  std::string rcv_device = "receiver";
  std::string bundle = "one";
  int rcv_order = -1;
  int src_order = -1;
  fs::path models = "models";
  fs::path store;
  PipelineConfig cfg;
};

void run_pipeline_cmd(PipelineArgs a) {
  const auto ingested = ingest_files(a.streams);
  for (const auto& w : ingested.warnings) std::cerr << "warning: " << w << '\n';
  if (ingested.skipped_lines) std::cerr << ingested.skipped_lines << " lines skipped\n";
  const auto src = ingested.streams.find(a.src_device);
  const auto rcv = ingested.streams.find(a.rcv_device);
  if (src == ingested.streams.end()) throw Error("device not found: " + a.src_device);
  if (rcv == ingested.streams.end()) throw Error("device not found: " + a.rcv_device);

  a.cfg.bundle = bundle_by_name(a.bundle, a.rcv_order, a.src_order);
  a.cfg.models_dir = a.models;
  EventStore store(a.store.empty() ? store_path_from_env("store") : a.store);
  const auto result = run_pipeline(src->second, rcv->second, a.cfg, store);
  std::printf("%zu windows, %zu candidates, %zu new; store %s\n", result.verdicts.size(),
              result.candidates.size(), result.added, store.dir().string().c_str());
}

// ---- serve ----
struct ServeArgs {
  fs::path store;
  ServeConfig serve;
  std::string static_dir;
};

ApiServer* g_server = nullptr;

void handle_signal(int) {
  if (g_server) g_server->stop();
}

void run_serve(const ServeArgs& a) {
  EventStore store(a.store.empty() ? store_path_from_env("store") : a.store);
  ServeConfig cfg = a.serve;
  if (!a.static_dir.empty()) cfg.static_dir = a.static_dir;
  ApiServer server(store, cfg);
  const int port = server.bind();
  g_server = &server;
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  std::printf("serving %s on http://%s:%d\n", store.dir().string().c_str(), cfg.host.c_str(),
              port);
  std::fflush(stdout);
  server.run();
  g_server = nullptr;
}

void add_fusion_options(CLI::App* cmd, FusionConfig& f) {
  cmd->add_option("--threshold-src", f.threshold_source, "Source gate")->capture_default_str();
  cmd->add_option("--threshold-rcv", f.threshold_receiver, "Receiver confidence threshold")
      ->capture_default_str();
  cmd->add_option("--window", f.window_s, "Fusion window (s)")->capture_default_str();
  cmd->add_option("--hop", f.window_hop_s, "Fusion window hop (s)")->capture_default_str();
  cmd->add_option("--max-drift", f.max_drift_s, "Lag bound (s)")->capture_default_str();
  cmd->add_flag("--max-aggregate", f.max_aggregate_fallback,
                "Score fallback windows as max(receiver max, xcorr)");
}

void add_bundle_options(CLI::App* cmd, std::string& name, int& rcv, int& src) {
  cmd->add_option("--bundle", name, "one | two | custom")
      ->check(CLI::IsMember({"one", "two", "custom"}))
      ->capture_default_str();
  cmd->add_option("--rcv-order", rcv, "Receiver stack order (custom bundle)");
  cmd->add_option("--src-order", src, "Source stack order (custom bundle)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Paired-sensor impulsive noise origin detection"};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config-file", "", "JSON file with option values");
  app.allow_config_extras(CLI::config_extras_mode::error);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic source/receiver scenario");
  c_synth->add_option("--config", synth.config, "Scenario JSON")->check(CLI::ExistingFile);
  c_synth->add_option("--out", synth.out, "Output directory")->capture_default_str();
  c_synth->add_option("--seed", synth.seed, "Override scenario seed");
  c_synth->add_option("--events", synth.events, "Override event count");
  c_synth->add_option("--clock-offset", synth.clock_offset, "Override receiver clock offset (s)");

  LabelArgs label;
  auto* c_label = app.add_subcommand("label", "Segment events from a stream with a 2-state HMM");
  c_label->add_option("--stream", label.stream, "Spectrogram JSONL")->required();
  c_label->add_option("--device", label.device, "Device id inside the stream");
  c_label->add_option("--out", label.out)->capture_default_str();
  c_label->add_option("--audibility", label.audibility, "Audibility assigned to segments")
      ->check(CLI::IsMember({"clear", "faint", "not_heard"}))
      ->capture_default_str();
  c_label->add_option("--tol", label.tol)->capture_default_str();
  c_label->add_option("--max-iter", label.max_iter)->capture_default_str();
  c_label->add_option("--seed", label.seed)->capture_default_str();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a detector on one device's stream");
  c_train->add_option("--stream", tr.stream, "Spectrogram JSONL")->required();
  c_train->add_option("--device", tr.device);
  c_train->add_option("--labels", tr.labels, "Labels JSONL")->required();
  c_train->add_option("--order", tr.order, "Delta stack order 0-3")
      ->check(CLI::Range(0, 3))
      ->capture_default_str();
  c_train->add_option("--out", tr.out)->capture_default_str();
  c_train->add_option("--epochs", tr.train.epochs)->capture_default_str();
  c_train->add_option("--lr", tr.train.learning_rate)->capture_default_str();
  c_train->add_option("--batch", tr.train.batch_size)->capture_default_str();
  c_train->add_option("--seed", tr.train.seed)->capture_default_str();
  c_train->add_option("--neg-per-pos", tr.negatives_per_positive,
                      "Subsample negatives to this ratio (0 keeps all)")
      ->capture_default_str();

  PredictArgs pred;
  auto* c_predict = app.add_subcommand("predict", "Score a stream with a trained detector");
  c_predict->add_option("--stream", pred.stream)->required();
  c_predict->add_option("--device", pred.device);
  c_predict->add_option("--model", pred.model)->required()->check(CLI::ExistingFile);
  c_predict->add_option("--out", pred.out)->capture_default_str();

  FuseArgs fuse;
  auto* c_fuse = app.add_subcommand("fuse", "Fuse source and receiver predictions");
  c_fuse->add_option("--src", fuse.src, "Source predictions JSONL")->required();
  c_fuse->add_option("--rcv", fuse.rcv, "Receiver predictions JSONL")->required();
  add_bundle_options(c_fuse, fuse.bundle, fuse.rcv_order, fuse.src_order);
  add_fusion_options(c_fuse, fuse.fusion);
  c_fuse->add_option("--out", fuse.out)->capture_default_str();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Average precision and PR curve");
  c_eval->add_option("--verdicts", ev.verdicts);
  c_eval->add_option("--truth", ev.truth);
  c_eval->add_option("--rcv-predictions", ev.rcv_predictions, "Also score the receiver-only baseline");
  c_eval->add_option("--predictions", ev.predictions);
  c_eval->add_option("--labels", ev.labels);
  c_eval->add_option("--window", ev.window_s)->capture_default_str();
  c_eval->add_option("--pr-csv", ev.pr_csv, "Write threshold,precision,recall,f1");

  PipelineArgs pipe;
  auto* c_pipe = app.add_subcommand("pipeline", "Ingest, detect, fuse and store candidates");
  c_pipe->add_option("--streams", pipe.streams, "Spectrogram JSONL files")
      ->required()
      ->check(CLI::ExistingFile);
  c_pipe->add_option("--src-device", pipe.src_device)->capture_default_str();
  c_pipe->add_option("--rcv-device", pipe.rcv_device)->capture_default_str();
  add_bundle_options(c_pipe, pipe.bundle, pipe.rcv_order, pipe.src_order);
  add_fusion_options(c_pipe, pipe.cfg.fusion);
  c_pipe->add_option("--models", pipe.models, "Directory with <role>_o<k>.json")
      ->capture_default_str();
  c_pipe->add_option("--store", pipe.store, "Store directory (default $NOISEPAIR_STORE or ./store)");
  c_pipe->add_option("--candidate-threshold", pipe.cfg.candidate_threshold)->capture_default_str();

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "HTTP API for reviewing candidates");
  c_serve->add_option("--store", serve.store, "Store directory (default $NOISEPAIR_STORE or ./store)");
  c_serve->add_option("--host", serve.serve.host)->capture_default_str();
  c_serve->add_option("--port", serve.serve.port)->capture_default_str();
  c_serve->add_option("--static", serve.static_dir, "Directory with UI assets")
      ->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_synth->parsed()) run_synth(synth);
    else if (c_label->parsed()) run_label(label);
    else if (c_train->parsed()) run_train(tr);
    else if (c_predict->parsed()) run_predict(pred);
    else if (c_fuse->parsed()) run_fuse(fuse);
    else if (c_eval->parsed()) run_eval(ev);
    else if (c_pipe->parsed()) run_pipeline_cmd(pipe);
    else if (c_serve->parsed()) run_serve(serve);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
