#include "noisepair/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "noisepair/error.hpp"

namespace noisepair {

namespace {

using json = nlohmann::json;

struct Tensor {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<double> v;

  void reshape(std::size_t cc, std::size_t hh, std::size_t ww) {
    c = cc;
    h = hh;
    w = ww;
    v.assign(c * h * w, 0.0);
  }
  std::size_t size() const { return v.size(); }
};

struct Trace {
  std::vector<Tensor> acts;  // acts[0] = normalised input, acts[i+1] = output of layer i
  std::vector<std::vector<std::uint32_t>> pool_index;
  double logit = 0.0;
};

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Binary cross-entropy evaluated from the logit.
double bce_from_logit(double z, bool label) {
  const double y = label ? 1.0 : 0.0;
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

struct Shape3 {
  std::size_t c, h, w;
};

// Output shape of every layer; throws "corrupt model file" on inconsistency.
std::vector<Shape3> infer_shapes(const CnnModel& model) {
  if (model.input_channels < 1 || model.input_height < 1 || model.input_width < 1) {
    throw Error("corrupt model file");
  }
  std::vector<Shape3> shapes;
  Shape3 s{static_cast<std::size_t>(model.input_channels),
           static_cast<std::size_t>(model.input_height),
           static_cast<std::size_t>(model.input_width)};
  shapes.push_back(s);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& l = model.layers[i];
    switch (l.kind) {
      case LayerKind::conv2d: {
        if (l.shape.size() != 4 || l.shape[0] < 1 || l.shape[2] < 1 || l.shape[3] < 1 ||
            l.shape[2] % 2 == 0 || l.shape[3] % 2 == 0 ||
            static_cast<std::size_t>(l.shape[1]) != s.c) {
          throw Error("corrupt model file");
        }
        const auto n = static_cast<std::size_t>(l.shape[0] * l.shape[1] * l.shape[2] * l.shape[3]);
        if (l.weights.size() != n || l.bias.size() != static_cast<std::size_t>(l.shape[0])) {
          throw Error("corrupt model file");
        }
        s.c = static_cast<std::size_t>(l.shape[0]);
        break;
      }
      case LayerKind::maxpool2d: {
        if (l.shape.size() != 2 || l.shape[0] < 1 || l.shape[1] < 1 || !l.weights.empty() ||
            !l.bias.empty()) {
          throw Error("corrupt model file");
        }
        s.h /= static_cast<std::size_t>(l.shape[0]);
        s.w /= static_cast<std::size_t>(l.shape[1]);
        if (s.h == 0 || s.w == 0) throw Error("corrupt model file");
        break;
      }
      case LayerKind::dense: {
        if (l.shape.size() != 2 || l.shape[0] < 1 ||
            static_cast<std::size_t>(l.shape[1]) != s.c * s.h * s.w) {
          throw Error("corrupt model file");
        }
        if (l.weights.size() != static_cast<std::size_t>(l.shape[0] * l.shape[1]) ||
            l.bias.size() != static_cast<std::size_t>(l.shape[0])) {
          throw Error("corrupt model file");
        }
        s = {static_cast<std::size_t>(l.shape[0]), 1, 1};
        break;
      }
      case LayerKind::relu:
        if (!l.weights.empty() || !l.bias.empty()) throw Error("corrupt model file");
        break;
      case LayerKind::logistic:
        if (i + 1 != model.layers.size() || s.c * s.h * s.w != 1) {
          throw Error("corrupt model file");
        }
        break;
    }
    shapes.push_back(s);
  }
  if (model.layers.empty() || model.layers.back().kind != LayerKind::logistic) {
    throw Error("corrupt model file");
  }
  if (model.norm.fitted() &&
      (model.norm.mean.size() != static_cast<std::size_t>(model.input_channels) ||
       model.norm.stddev.size() != model.norm.mean.size())) {
    throw Error("corrupt model file");
  }
  return shapes;
}

void check_input(const CnnModel& model, const DetectionWindow& window) {
  if (window.channels != static_cast<std::size_t>(model.input_channels)) {
    throw Error("model/input channel mismatch");
  }
  if (window.height != static_cast<std::size_t>(model.input_height) ||
      window.width != static_cast<std::size_t>(model.input_width) ||
      window.values.size() != window.channels * window.height * window.width) {
    throw Error("model/input shape mismatch");
  }
}

void conv_forward(const Tensor& in, const Layer& l, Tensor& out) {
  const auto oc = static_cast<std::size_t>(l.shape[0]);
  const auto kh = static_cast<std::size_t>(l.shape[2]);
  const auto kw = static_cast<std::size_t>(l.shape[3]);
  const std::size_t ph = kh / 2, pw = kw / 2;
  out.reshape(oc, in.h, in.w);
  for (std::size_t o = 0; o < oc; ++o) {
    double* dst = out.v.data() + o * in.h * in.w;
    std::fill_n(dst, in.h * in.w, l.bias[o]);
    for (std::size_t i = 0; i < in.c; ++i) {
      const double* src = in.v.data() + i * in.h * in.w;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const double wgt = l.weights[((o * in.c + i) * kh + ky) * kw + kx];
          // Output (y, x) reads input (y + ky - ph, x + kx - pw).
          const std::size_t y0 = ky < ph ? ph - ky : 0;
          const std::size_t y1 = std::min(in.h, in.h + ph - ky);
          const std::size_t x0 = kx < pw ? pw - kx : 0;
          const std::size_t x1 = std::min(in.w, in.w + pw - kx);
          const auto dx = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pw);
          for (std::size_t y = y0; y < y1; ++y) {
            const double* srow = src + (y + ky - ph) * in.w;
            double* drow = dst + y * in.w;
            for (std::size_t x = x0; x < x1; ++x) {
              drow[x] += wgt * srow[static_cast<std::ptrdiff_t>(x) + dx];
            }
          }
        }
      }
    }
  }
}

void conv_backward(const Tensor& in, const Layer& l, const Tensor& dout, double* dw, double* db,
                   Tensor* din) {
  const auto oc = static_cast<std::size_t>(l.shape[0]);
  const auto kh = static_cast<std::size_t>(l.shape[2]);
  const auto kw = static_cast<std::size_t>(l.shape[3]);
  const std::size_t ph = kh / 2, pw = kw / 2;
  if (din) din->reshape(in.c, in.h, in.w);
  for (std::size_t o = 0; o < oc; ++o) {
    const double* g = dout.v.data() + o * in.h * in.w;
    if (db) {
      double acc = 0.0;
      for (std::size_t k = 0; k < in.h * in.w; ++k) acc += g[k];
      db[o] += acc;
    }
    for (std::size_t i = 0; i < in.c; ++i) {
      const double* src = in.v.data() + i * in.h * in.w;
      double* dsrc = din ? din->v.data() + i * in.h * in.w : nullptr;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::size_t widx = ((o * in.c + i) * kh + ky) * kw + kx;
          const double wgt = l.weights[widx];
          const std::size_t y0 = ky < ph ? ph - ky : 0;
          const std::size_t y1 = std::min(in.h, in.h + ph - ky);
          const std::size_t x0 = kx < pw ? pw - kx : 0;
          const std::size_t x1 = std::min(in.w, in.w + pw - kx);
          const auto dx = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pw);
          double acc = 0.0;
          for (std::size_t y = y0; y < y1; ++y) {
            const std::size_t off = (y + ky - ph) * in.w;
            const double* srow = src + off;
            const double* grow = g + y * in.w;
            for (std::size_t x = x0; x < x1; ++x) {
              acc += grow[x] * srow[static_cast<std::ptrdiff_t>(x) + dx];
            }
            if (dsrc) {
              double* drow = dsrc + off;
              for (std::size_t x = x0; x < x1; ++x) {
                drow[static_cast<std::ptrdiff_t>(x) + dx] += wgt * grow[x];
              }
            }
          }
          if (dw) dw[widx] += acc;
        }
      }
    }
  }
}

void pool_forward(const Tensor& in, const Layer& l, Tensor& out, std::vector<std::uint32_t>& idx) {
  const auto py = static_cast<std::size_t>(l.shape[0]);
  const auto px = static_cast<std::size_t>(l.shape[1]);
  out.reshape(in.c, in.h / py, in.w / px);
  idx.assign(out.size(), 0);
  for (std::size_t c = 0; c < out.c; ++c) {
    for (std::size_t y = 0; y < out.h; ++y) {
      for (std::size_t x = 0; x < out.w; ++x) {
        std::size_t best = (c * in.h + y * py) * in.w + x * px;
        for (std::size_t dy = 0; dy < py; ++dy) {
          for (std::size_t dx = 0; dx < px; ++dx) {
            const std::size_t k = (c * in.h + y * py + dy) * in.w + x * px + dx;
            if (in.v[k] > in.v[best]) best = k;
          }
        }
        const std::size_t o = (c * out.h + y) * out.w + x;
        out.v[o] = in.v[best];
        idx[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

void dense_forward(const Tensor& in, const Layer& l, Tensor& out) {
  const auto no = static_cast<std::size_t>(l.shape[0]);
  const auto ni = static_cast<std::size_t>(l.shape[1]);
  out.reshape(no, 1, 1);
  for (std::size_t o = 0; o < no; ++o) {
    const double* row = l.weights.data() + o * ni;
    double acc = l.bias[o];
    for (std::size_t i = 0; i < ni; ++i) acc += row[i] * in.v[i];
    out.v[o] = acc;
  }
}

void run_forward(const CnnModel& model, const DetectionWindow& window, Trace& trace) {
  const std::size_t n_layers = model.layers.size();
  trace.acts.resize(n_layers + 1);
  trace.pool_index.resize(n_layers);

  Tensor& x = trace.acts[0];
  x.reshape(window.channels, window.height, window.width);
  const std::size_t plane = window.height * window.width;
  for (std::size_t c = 0; c < window.channels; ++c) {
    const double mean = model.norm.fitted() ? model.norm.mean[c] : 0.0;
    const double inv = model.norm.fitted() ? 1.0 / model.norm.stddev[c] : 1.0;
    for (std::size_t k = 0; k < plane; ++k) {
      x.v[c * plane + k] = (window.values[c * plane + k] - mean) * inv;
    }
  }

  for (std::size_t i = 0; i < n_layers; ++i) {
    const Layer& l = model.layers[i];
    const Tensor& in = trace.acts[i];
    Tensor& out = trace.acts[i + 1];
    switch (l.kind) {
      case LayerKind::conv2d:
        conv_forward(in, l, out);
        break;
      case LayerKind::maxpool2d:
        pool_forward(in, l, out, trace.pool_index[i]);
        break;
      case LayerKind::dense:
        dense_forward(in, l, out);
        break;
      case LayerKind::relu:
        out.reshape(in.c, in.h, in.w);
        for (std::size_t k = 0; k < in.size(); ++k) out.v[k] = in.v[k] > 0.0 ? in.v[k] : 0.0;
        break;
      case LayerKind::logistic:
        trace.logit = in.v[0];
        out.reshape(1, 1, 1);
        out.v[0] = sigmoid(in.v[0]);
        break;
    }
  }
}

// Accumulates parameter gradients into `grads` (already sized) and, when
// requested, the gradient w.r.t. the normalised input into `input_grad`.
double run_backward(const CnnModel& model, const Trace& trace, bool label, Gradients& grads,
                    std::vector<Tensor>& scratch, Tensor* input_grad) {
  const std::size_t n_layers = model.layers.size();
  scratch.resize(n_layers + 1);
  // Gradient w.r.t. the logit of a logistic + cross-entropy head.
  Tensor& top = scratch[n_layers];
  top.reshape(1, 1, 1);
  top.v[0] = sigmoid(trace.logit) - (label ? 1.0 : 0.0);

  for (std::size_t ii = n_layers; ii-- > 0;) {
    const Layer& l = model.layers[ii];
    const Tensor& in = trace.acts[ii];
    const Tensor& dout = scratch[ii + 1];
    Tensor& din = scratch[ii];
    const bool need_din = ii > 0 || input_grad != nullptr;
    switch (l.kind) {
      case LayerKind::logistic:
        din = dout;  // already d loss / d logit
        break;
      case LayerKind::relu:
        din.reshape(in.c, in.h, in.w);
        for (std::size_t k = 0; k < in.size(); ++k) din.v[k] = in.v[k] > 0.0 ? dout.v[k] : 0.0;
        break;
      case LayerKind::maxpool2d: {
        din.reshape(in.c, in.h, in.w);
        const auto& idx = trace.pool_index[ii];
        for (std::size_t k = 0; k < dout.size(); ++k) din.v[idx[k]] += dout.v[k];
        break;
      }
      case LayerKind::dense: {
        const auto no = static_cast<std::size_t>(l.shape[0]);
        const auto ni = static_cast<std::size_t>(l.shape[1]);
        double* dw = grads.weights[ii].data();
        double* db = grads.bias[ii].data();
        din.reshape(in.c, in.h, in.w);
        for (std::size_t o = 0; o < no; ++o) {
          const double g = dout.v[o];
          db[o] += g;
          if (g == 0.0) continue;
          double* dwr = dw + o * ni;
          const double* wr = l.weights.data() + o * ni;
          for (std::size_t i = 0; i < ni; ++i) {
            dwr[i] += g * in.v[i];
            din.v[i] += g * wr[i];
          }
        }
        break;
      }
      case LayerKind::conv2d:
        conv_backward(in, l, dout, grads.weights[ii].data(), grads.bias[ii].data(),
                      need_din ? &din : nullptr);
        break;
    }
  }
  if (input_grad) *input_grad = scratch[0];
  return bce_from_logit(trace.logit, label);
}

Gradients zero_gradients(const CnnModel& model) {
  Gradients g;
  g.weights.resize(model.layers.size());
  g.bias.resize(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    g.weights[i].assign(model.layers[i].weights.size(), 0.0);
    g.bias[i].assign(model.layers[i].bias.size(), 0.0);
  }
  return g;
}

CnnModel build_architecture(int input_channels, int input_height, int input_width) {
  if (input_channels < 1 || input_height < 4 || input_width < 4) {
    throw Error("invalid model input shape");
  }
  CnnModel m;
  m.input_channels = input_channels;
  m.input_height = input_height;
  m.input_width = input_width;
  auto conv = [](int out, int in) {
    Layer l;
    l.kind = LayerKind::conv2d;
    l.shape = {out, in, 3, 3};
    l.weights.assign(static_cast<std::size_t>(out * in * 9), 0.0);
    l.bias.assign(static_cast<std::size_t>(out), 0.0);
    return l;
  };
  auto dense = [](int out, int in) {
    Layer l;
    l.kind = LayerKind::dense;
    l.shape = {out, in};
    l.weights.assign(static_cast<std::size_t>(out * in), 0.0);
    l.bias.assign(static_cast<std::size_t>(out), 0.0);
    return l;
  };
  auto simple = [](LayerKind k, std::vector<int> shape = {}) {
    Layer l;
    l.kind = k;
    l.shape = std::move(shape);
    return l;
  };
  const int flat = 32 * (input_height / 2 / 2) * (input_width / 2 / 2);
  m.layers = {conv(16, input_channels),
              simple(LayerKind::relu),
              simple(LayerKind::maxpool2d, {2, 2}),
              conv(32, 16),
              simple(LayerKind::relu),
              simple(LayerKind::maxpool2d, {2, 2}),
              dense(64, flat),
              simple(LayerKind::relu),
              dense(1, 64),
              simple(LayerKind::logistic)};
  infer_shapes(m);
  return m;
}

std::vector<double> window_slice(const DetectionWindow& w, std::size_t channel) {
  const std::size_t plane = w.height * w.width;
  return {w.values.begin() + static_cast<std::ptrdiff_t>(channel * plane),
          w.values.begin() + static_cast<std::ptrdiff_t>((channel + 1) * plane)};
}

}  // namespace

void WindowingConfig::validate() const {
  if (window_frames < 1 || hop_frames < 1 || hop_frames > window_frames) {
    throw Error("invalid windowing config");
  }
}

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::dense: return "dense";
    case LayerKind::logistic: return "logistic";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "conv2d") return LayerKind::conv2d;
  if (s == "relu") return LayerKind::relu;
  if (s == "maxpool2d") return LayerKind::maxpool2d;
  if (s == "dense") return LayerKind::dense;
  if (s == "logistic") return LayerKind::logistic;
  throw Error("corrupt model file");
}

std::size_t CnnModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

CnnModel make_zero_model(int input_channels, int input_height, int input_width) {
  return build_architecture(input_channels, input_height, input_width);
}

CnnModel make_model(int input_channels, std::uint64_t seed, int input_height, int input_width) {
  CnnModel m = build_architecture(input_channels, input_height, input_width);
  std::mt19937_64 rng(seed);
  for (auto& l : m.layers) {
    double fan_in = 0.0, fan_out = 0.0;
    if (l.kind == LayerKind::conv2d) {
      const double k = l.shape[2] * l.shape[3];
      fan_in = l.shape[1] * k;
      fan_out = l.shape[0] * k;
    } else if (l.kind == LayerKind::dense) {
      fan_in = l.shape[1];
      fan_out = l.shape[0];
    } else {
      continue;
    }
    const double s = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& w : l.weights) w = (2.0 * uniform01(rng) - 1.0) * s;
  }
  return m;
}

std::vector<DetectionWindow> make_windows(const ChannelStack& stack, const WindowingConfig& cfg,
                                          const std::vector<EventLabel>* events) {
  cfg.validate();
  const auto wf = static_cast<std::size_t>(cfg.window_frames);
  const auto hf = static_cast<std::size_t>(cfg.hop_frames);
  if (stack.n_frames < wf) throw Error("stream shorter than one window");
  const std::size_t count = (stack.n_frames - wf) / hf + 1;
  const double span = static_cast<double>(wf) * stack.frame_period_s;

  std::vector<DetectionWindow> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    DetectionWindow w;
    w.channels = stack.n_channels();
    w.height = stack.n_mels;
    w.width = wf;
    w.values.resize(w.channels * w.height * w.width);
    const std::size_t first = k * hf;
    for (std::size_t c = 0; c < w.channels; ++c) {
      for (std::size_t m = 0; m < w.height; ++m) {
        for (std::size_t t = 0; t < wf; ++t) {
          w.values[(c * w.height + m) * wf + t] = stack.at(c, m, first + t);
        }
      }
    }
    w.start_time_s = stack.start_time_s + static_cast<double>(first) * stack.frame_period_s;
    if (events) {
      bool positive = false;
      for (const auto& e : *events) {
        if (e.binary() && e.overlaps(w.start_time_s, w.start_time_s + span)) {
          positive = true;
          break;
        }
      }
      w.label = positive;
    }
    out.push_back(std::move(w));
  }
  return out;
}

double forward_logit(const CnnModel& model, const DetectionWindow& window) {
  check_input(model, window);
  Trace trace;
  run_forward(model, window, trace);
  return trace.logit;
}

double forward(const CnnModel& model, const DetectionWindow& window) {
  return std::clamp(sigmoid(forward_logit(model, window)), 1e-12, 1.0 - 1e-12);
}

Gradients backprop(const CnnModel& model, const DetectionWindow& window, bool label) {
  check_input(model, window);
  Trace trace;
  run_forward(model, window, trace);
  Gradients g = zero_gradients(model);
  std::vector<Tensor> scratch;
  Tensor din;
  g.loss = run_backward(model, trace, label, g, scratch, &din);
  g.input = std::move(din.v);
  const std::size_t plane = window.height * window.width;
  if (model.norm.fitted()) {
    for (std::size_t c = 0; c < window.channels; ++c) {
      for (std::size_t k = 0; k < plane; ++k) g.input[c * plane + k] /= model.norm.stddev[c];
    }
  }
  return g;
}

TrainResult train(CnnModel model, const std::vector<DetectionWindow>& windows,
                  const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0) || cfg.epochs < 0 || cfg.batch_size < 1) {
    throw Error("invalid train config");
  }
  TrainResult result;
  if (cfg.epochs == 0) {
    result.model = std::move(model);
    return result;
  }
  infer_shapes(model);
  std::size_t positives = 0, negatives = 0;
  for (const auto& w : windows) {
    check_input(model, w);
    if (!w.label) throw Error("unlabeled training window");
    (*w.label ? positives : negatives) += 1;
  }
  if (positives == 0 || negatives == 0) throw Error("degenerate training set");

  if (cfg.fit_normalization && !model.norm.fitted()) {
    const auto channels = static_cast<std::size_t>(model.input_channels);
    model.norm.mean.assign(channels, 0.0);
    model.norm.stddev.assign(channels, 1.0);
    for (std::size_t c = 0; c < channels; ++c) {
      double sum = 0.0, sq = 0.0;
      std::size_t n = 0;
      for (const auto& w : windows) {
        for (const double v : window_slice(w, c)) {
          sum += v;
          sq += v * v;
          ++n;
        }
      }
      const double mean = sum / static_cast<double>(n);
      const double var = std::max(sq / static_cast<double>(n) - mean * mean, 0.0);
      model.norm.mean[c] = mean;
      model.norm.stddev[c] = std::sqrt(var) > 1e-6 ? std::sqrt(var) : 1.0;
    }
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);

  Trace trace;
  std::vector<Tensor> scratch;
  Gradients grads = zero_gradients(model);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the portable 53-bit uniform draw.
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      for (auto& g : grads.weights) std::fill(g.begin(), g.end(), 0.0);
      for (auto& g : grads.bias) std::fill(g.begin(), g.end(), 0.0);
      for (std::size_t k = start; k < stop; ++k) {
        const auto& w = windows[order[k]];
        run_forward(model, w, trace);
        epoch_loss += run_backward(model, trace, *w.label, grads, scratch, nullptr);
      }
      const double scale = cfg.learning_rate / static_cast<double>(stop - start);
      for (std::size_t li = 0; li < model.layers.size(); ++li) {
        auto& l = model.layers[li];
        for (std::size_t k = 0; k < l.weights.size(); ++k) l.weights[k] -= scale * grads.weights[li][k];
        for (std::size_t k = 0; k < l.bias.size(); ++k) l.bias[k] -= scale * grads.bias[li][k];
      }
    }
    epoch_loss /= static_cast<double>(windows.size());
    if (!std::isfinite(epoch_loss)) throw Error("training diverged");
    result.loss_history.push_back(epoch_loss);
  }
  result.model = std::move(model);
  return result;
}

namespace {

// Activation pattern: which ReLU inputs are positive and which max-pool
// inputs were selected. Finite differences are only meaningful when the
// pattern does not change between the perturbed evaluations.
std::vector<std::uint32_t> activation_pattern(const CnnModel& model, const Trace& trace) {
  std::vector<std::uint32_t> pattern;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (model.layers[i].kind == LayerKind::relu) {
      for (const double v : trace.acts[i].v) pattern.push_back(v > 0.0 ? 1u : 0u);
    } else if (model.layers[i].kind == LayerKind::maxpool2d) {
      pattern.insert(pattern.end(), trace.pool_index[i].begin(), trace.pool_index[i].end());
    }
  }
  return pattern;
}

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace

GradientCheckResult gradient_check(const CnnModel& model, const DetectionWindow& window,
                                   bool label, const GradientCheckOptions& options) {
  check_input(model, window);
  infer_shapes(model);
  const Gradients analytic = backprop(model, window, label);

  Trace base_trace;
  run_forward(model, window, base_trace);
  const auto base_pattern = activation_pattern(model, base_trace);

  GradientCheckResult result;
  result.per_layer.assign(model.layers.size(), 0.0);
  std::mt19937_64 rng(options.seed);

  CnnModel probe = model;
  DetectionWindow probe_window = window;
  Trace trace;

  // Central difference of the loss along one coordinate; nullopt when the
  // perturbation crosses a kink.
  auto central = [&](double& coord) -> std::optional<double> {
    const double saved = coord;
    coord = saved + options.step;
    run_forward(probe, probe_window, trace);
    const double up = bce_from_logit(trace.logit, label);
    const bool same_up = activation_pattern(probe, trace) == base_pattern;
    coord = saved - options.step;
    run_forward(probe, probe_window, trace);
    const double down = bce_from_logit(trace.logit, label);
    const bool same_down = activation_pattern(probe, trace) == base_pattern;
    coord = saved;
    if (!same_up || !same_down) return std::nullopt;
    return (up - down) / (2.0 * options.step);
  };

  for (std::size_t li = 0; li < probe.layers.size(); ++li) {
    Layer& l = probe.layers[li];
    if (!l.has_parameters()) continue;
    const std::size_t total = l.weights.size() + l.bias.size();
    // Always include the first bias so every layer's bias path is covered.
    std::vector<std::size_t> coords = {l.weights.size()};
    for (int s = 0; s < options.samples_per_layer; ++s) {
      coords.push_back(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(total)));
    }
    for (const std::size_t k : coords) {
      const bool is_weight = k < l.weights.size();
      double& coord = is_weight ? l.weights[k] : l.bias[k - l.weights.size()];
      const double a = is_weight ? analytic.weights[li][k] : analytic.bias[li][k - l.weights.size()];
      const auto numeric = central(coord);
      if (!numeric) {
        ++result.skipped;
        continue;
      }
      const double err = relative_error(a, *numeric, options.abs_floor);
      result.per_layer[li] = std::max(result.per_layer[li], err);
      result.max_relative_error = std::max(result.max_relative_error, err);
      ++result.checked;
    }
  }

  for (int s = 0; s < options.input_samples; ++s) {
    const auto k = static_cast<std::size_t>(uniform01(rng) *
                                            static_cast<double>(probe_window.values.size()));
    const auto numeric = central(probe_window.values[k]);
    if (!numeric) {
      ++result.skipped;
      continue;
    }
    const double err = relative_error(analytic.input[k], *numeric, options.abs_floor);
    result.input_error = std::max(result.input_error, err);
    result.max_relative_error = std::max(result.max_relative_error, err);
    ++result.checked;
  }
  return result;
}

PredictionSeries predict_stream(const CnnModel& model, const ChannelStack& stack,
                                const WindowingConfig& cfg) {
  if (stack.n_channels() != static_cast<std::size_t>(model.input_channels)) {
    throw Error("model/input channel mismatch");
  }
  infer_shapes(model);
  const auto windows = make_windows(stack, cfg);
  PredictionSeries series;
  series.device_id = stack.device_id;
  series.step_s = static_cast<double>(cfg.hop_frames) * stack.frame_period_s;
  series.times.reserve(windows.size());
  series.probs.reserve(windows.size());
  Trace trace;
  for (const auto& w : windows) {
    check_input(model, w);
    run_forward(model, w, trace);
    series.times.push_back(w.start_time_s);
    series.probs.push_back(std::clamp(sigmoid(trace.logit), 1e-12, 1.0 - 1e-12));
  }
  return series;
}

std::string model_to_json(const CnnModel& model) {
  json j;
  j["version"] = model.version;
  j["input_channels"] = model.input_channels;
  j["input_shape"] = {model.input_height, model.input_width};
  j["norm"] = {{"mean", model.norm.mean}, {"std", model.norm.stddev}};
  json layers = json::array();
  for (const auto& l : model.layers) {
    layers.push_back({{"kind", to_string(l.kind)},
                      {"shape", l.shape},
                      {"weights", l.weights},
                      {"bias", l.bias}});
  }
  j["layers"] = std::move(layers);
  return j.dump();
}

CnnModel model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception&) {
    throw Error("corrupt model file");
  }
  CnnModel m;
  try {
    m.version = j.at("version").get<int>();
    if (m.version != kModelVersion) throw Error("unsupported model version");
    m.input_channels = j.at("input_channels").get<int>();
    const auto shape = j.at("input_shape").get<std::vector<int>>();
    if (shape.size() != 2) throw Error("corrupt model file");
    m.input_height = shape[0];
    m.input_width = shape[1];
    m.norm.mean = j.at("norm").at("mean").get<std::vector<double>>();
    m.norm.stddev = j.at("norm").at("std").get<std::vector<double>>();
    for (const auto& jl : j.at("layers")) {
      Layer l;
      l.kind = layer_kind_from_string(jl.at("kind").get<std::string>());
      l.shape = jl.at("shape").get<std::vector<int>>();
      l.weights = jl.at("weights").get<std::vector<double>>();
      l.bias = jl.at("bias").get<std::vector<double>>();
      m.layers.push_back(std::move(l));
    }
  } catch (const json::exception&) {
    throw Error("corrupt model file");
  }
  for (const double s : m.norm.stddev) {
    if (!(s > 0.0)) throw Error("corrupt model file");
  }
  infer_shapes(m);
  return m;
}

void save_model(const CnnModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write model file: " + path.string());
  out << model_to_json(model) << '\n';
  if (!out) throw Error("cannot write model file: " + path.string());
}

CnnModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("model file not found: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return model_from_json(buffer.str());
}

std::vector<DetectionWindow> balance_windows(const std::vector<DetectionWindow>& windows,
                                             double negatives_per_positive, std::uint64_t seed) {
  std::size_t positives = 0;
  std::vector<std::size_t> negatives;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i].label.value_or(false)) {
      ++positives;
    } else {
      negatives.push_back(i);
    }
  }
  const auto keep = std::min(
      negatives.size(),
      static_cast<std::size_t>(std::ceil(negatives_per_positive * static_cast<double>(positives))));
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < keep; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform01(rng) *
                                                static_cast<double>(negatives.size() - i));
    std::swap(negatives[i], negatives[std::min(j, negatives.size() - 1)]);
  }
  std::vector<bool> kept(windows.size(), false);
  for (std::size_t i = 0; i < keep; ++i) kept[negatives[i]] = true;
  std::vector<DetectionWindow> out;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i].label.value_or(false) || kept[i]) out.push_back(windows[i]);
  }
  return out;
}

}  // namespace noisepair
