#pragma once

// Single-sensor sound event detector: 1 s spectrogram windows scored by a
// small convolutional network with a logistic output.
//
// Architecture (input [C x 30 x 8]):
//   conv 3x3 (16, same) -> relu -> maxpool 2x2 -> conv 3x3 (32, same) -> relu
//   -> maxpool 2x2 -> dense 64 -> relu -> dense 1 -> logistic

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "noisepair/frontend.hpp"
#include "noisepair/labels.hpp"

namespace noisepair {

struct WindowingConfig {
  int window_frames = 8;  // 1 s
  int hop_frames = 3;     // 0.375 s

  void validate() const;
};

struct DetectionWindow {
  std::size_t channels = 0;
  std::size_t height = 0;  // mel bins
  std::size_t width = 0;   // frames
  std::vector<double> values;  // [channels x height x width]
  double start_time_s = 0.0;
  std::optional<bool> label;
};

enum class LayerKind { conv2d, relu, maxpool2d, dense, logistic };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

// shape: conv2d {out, in, kh, kw}; dense {out, in}; maxpool2d {ph, pw};
// relu/logistic {}.
struct Layer {
  LayerKind kind = LayerKind::relu;
  std::vector<int> shape;
  std::vector<double> weights;
  std::vector<double> bias;

  bool has_parameters() const { return kind == LayerKind::conv2d || kind == LayerKind::dense; }
  friend bool operator==(const Layer&, const Layer&) = default;
};

// Per-channel input standardisation fitted on training windows.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool fitted() const { return !mean.empty(); }
  friend bool operator==(const Normalization&, const Normalization&) = default;
};

inline constexpr int kModelVersion = 1;

struct CnnModel {
  int version = kModelVersion;
  int input_channels = 1;
  int input_height = kDefaultMelBins;
  int input_width = 8;
  Normalization norm;
  std::vector<Layer> layers;

  std::size_t parameter_count() const;
  friend bool operator==(const CnnModel&, const CnnModel&) = default;
};

// Glorot-uniform initialised model of the fixed architecture.
CnnModel make_model(int input_channels, std::uint64_t seed, int input_height = kDefaultMelBins,
                    int input_width = 8);

// Same architecture with every weight and bias zero.
CnnModel make_zero_model(int input_channels, int input_height = kDefaultMelBins,
                         int input_width = 8);

struct PredictionSeries {
  std::string device_id;
  double step_s = 0.375;
  std::vector<double> times;
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
};

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 10;
  int batch_size = 16;
  std::uint64_t seed = 1;
  // Fit input standardisation from the training windows when the model has none.
  bool fit_normalization = true;
};

struct TrainResult {
  CnnModel model;
  std::vector<double> loss_history;  // mean binary cross-entropy per epoch
};

std::vector<DetectionWindow> make_windows(const ChannelStack& stack, const WindowingConfig& cfg,
                                          const std::vector<EventLabel>* events = nullptr);

// Event probability, clamped to [1e-12, 1 - 1e-12].
double forward(const CnnModel& model, const DetectionWindow& window);

// Pre-logistic output.
double forward_logit(const CnnModel& model, const DetectionWindow& window);

TrainResult train(CnnModel model, const std::vector<DetectionWindow>& windows,
                  const TrainConfig& cfg);

// Gradient of the binary cross-entropy w.r.t. every parameter, laid out like
// the model's layers.
struct Gradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> bias;
  std::vector<double> input;  // d loss / d (unnormalised) input
  double loss = 0.0;
};

Gradients backprop(const CnnModel& model, const DetectionWindow& window, bool label);

struct GradientCheckOptions {
  double step = 1e-4;
  int samples_per_layer = 24;
  int input_samples = 24;
  std::uint64_t seed = 7;
  // Denominator floor for the relative error.
  double abs_floor = 1e-7;
};

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  // Coordinates skipped because the perturbation crossed a ReLU or max-pool kink.
  std::size_t skipped = 0;
  // Worst error per parameterised layer index, plus input gradient.
  std::vector<double> per_layer;
  double input_error = 0.0;
};

GradientCheckResult gradient_check(const CnnModel& model, const DetectionWindow& window,
                                   bool label, const GradientCheckOptions& options = {});

PredictionSeries predict_stream(const CnnModel& model, const ChannelStack& stack,
                                const WindowingConfig& cfg = {});

void save_model(const CnnModel& model, const std::filesystem::path& path);
CnnModel load_model(const std::filesystem::path& path);

std::string model_to_json(const CnnModel& model);
CnnModel model_from_json(const std::string& text);

// Keeps every positive window and a seeded random subset of negatives, at most
// `negatives_per_positive` per positive. Order of the survivors is preserved.
std::vector<DetectionWindow> balance_windows(const std::vector<DetectionWindow>& windows,
                                             double negatives_per_positive, std::uint64_t seed);

}  // namespace noisepair
