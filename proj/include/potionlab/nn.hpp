#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "data.hpp"
#include "json_util.hpp"
#include "util.hpp"

namespace potionlab {

enum class LayerKind { dense, conv2d, relu, flatten };

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0, out = 0;  // dense
  std::size_t in_channels = 0, out_channels = 0, kernel = 0, stride = 1, padding = 0;  // conv2d

  static LayerSpec dense(std::size_t in, std::size_t out) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.in = in;
    s.out = out;
    return s;
  }
  static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride = 1,
                          std::size_t padding = 0) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
  }
  static LayerSpec relu() { return LayerSpec{}; }
  static LayerSpec flatten() {
    LayerSpec s;
    s.kind = LayerKind::flatten;
    return s;
  }
  bool operator==(const LayerSpec&) const = default;
};

struct ModelSpec {
  Shape3 input;
  std::size_t classes = 0;
  std::vector<LayerSpec> layers;
  std::uint64_t seed = 0;
  bool operator==(const ModelSpec&) const = default;
};

// Dense MLP over a flattened input, ReLU between layers.
inline ModelSpec mlp_spec(Shape3 input, std::vector<std::size_t> hidden, std::size_t classes, std::uint64_t seed) {
  ModelSpec s{input, classes, {}, seed};
  std::size_t prev = input.size();
  for (std::size_t h : hidden) {
    s.layers.push_back(LayerSpec::dense(prev, h));
    s.layers.push_back(LayerSpec::relu());
    prev = h;
  }
  s.layers.push_back(LayerSpec::dense(prev, classes));
  return s;
}

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::size_t layer, const std::string& what)
      : std::invalid_argument("layer " + std::to_string(layer) + ": " + what), layer_(layer) {}
  std::size_t layer() const { return layer_; }

 private:
  std::size_t layer_;
};

struct LayerPlan {
  LayerSpec spec;
  Shape3 in, out;
  std::size_t offset = 0;   // first parameter index; weights then biases
  std::size_t weights = 0;
  std::size_t biases = 0;
  std::size_t param_count() const { return weights + biases; }
  std::size_t fan_in() const {
    return spec.kind == LayerKind::dense ? spec.in : spec.in_channels * spec.kernel * spec.kernel;
  }
};

inline std::vector<LayerPlan> plan_layers(const ModelSpec& spec) {
  if (spec.classes < 2) throw std::invalid_argument("model spec: class count must be >= 2");
  if (spec.input.size() == 0) throw std::invalid_argument("model spec: empty input shape");
  if (spec.layers.empty()) throw std::invalid_argument("model spec: no layers");
  std::vector<LayerPlan> plan;
  Shape3 cur = spec.input;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& ls = spec.layers[l];
    LayerPlan p;
    p.spec = ls;
    p.in = cur;
    p.offset = offset;
    switch (ls.kind) {
      case LayerKind::dense:
        if (ls.in == 0 || ls.out == 0) throw ShapeError(l, "dense layer with zero width");
        if (ls.in != cur.size())
          throw ShapeError(l, "dense expects " + std::to_string(ls.in) + " inputs but receives " +
                                  std::to_string(cur.size()));
        p.out = {1, 1, ls.out};
        p.weights = ls.in * ls.out;
        p.biases = ls.out;
        break;
      case LayerKind::conv2d: {
        if (ls.in_channels == 0 || ls.out_channels == 0 || ls.kernel == 0 || ls.stride == 0)
          throw ShapeError(l, "conv2d with zero size parameter");
        if (ls.in_channels != cur.channels)
          throw ShapeError(l, "conv2d expects " + std::to_string(ls.in_channels) + " channels but receives " +
                                  std::to_string(cur.channels));
        if (cur.height + 2 * ls.padding < ls.kernel || cur.width + 2 * ls.padding < ls.kernel)
          throw ShapeError(l, "conv2d kernel larger than padded input " + to_string(cur));
        p.out = {(cur.height + 2 * ls.padding - ls.kernel) / ls.stride + 1,
                 (cur.width + 2 * ls.padding - ls.kernel) / ls.stride + 1, ls.out_channels};
        p.weights = ls.out_channels * ls.kernel * ls.kernel * ls.in_channels;
        p.biases = ls.out_channels;
        break;
      }
      case LayerKind::relu:
        p.out = cur;
        break;
      case LayerKind::flatten:
        p.out = {1, 1, cur.size()};
        break;
    }
    offset += p.param_count();
    cur = p.out;
    plan.push_back(p);
  }
  if (cur.size() != spec.classes)
    throw ShapeError(spec.layers.size() - 1, "final output has " + std::to_string(cur.size()) +
                                                 " units but the model has " + std::to_string(spec.classes) +
                                                 " classes");
  return plan;
}

class Model {
 public:
  Model() = default;
  explicit Model(ModelSpec spec) : spec_(std::move(spec)), plan_(plan_layers(spec_)) {
    std::size_t n = 0;
    for (const auto& p : plan_) n += p.param_count();
    params_.assign(n, 0.0);
  }

  const ModelSpec& spec() const { return spec_; }
  const std::vector<LayerPlan>& layers() const { return plan_; }
  std::size_t param_count() const { return params_.size(); }
  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }
  std::vector<double>& param_vector() { return params_; }

  // layer index -> [begin, end) of its parameters; layers without parameters get empty ranges
  std::vector<std::pair<std::size_t, std::size_t>> index_map() const {
    std::vector<std::pair<std::size_t, std::size_t>> m;
    for (const auto& p : plan_) m.emplace_back(p.offset, p.offset + p.param_count());
    return m;
  }

  std::string checksum() const {
    Checksum c;
    c.update(spec_json_string());
    c.update_values<double>(params_);
    return c.hex();
  }

  std::string spec_json_string() const;

 private:
  ModelSpec spec_;
  std::vector<LayerPlan> plan_;
  std::vector<double> params_;
};

// Kaiming-uniform (fan-in) weights, zero biases.
inline Model build_model(const ModelSpec& spec) {
  Model m(spec);
  Rng rng(spec.seed);
  auto theta = m.params();
  for (const auto& p : m.layers()) {
    if (p.weights == 0) continue;
    const double bound = std::sqrt(6.0 / static_cast<double>(p.fan_in()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < p.weights; ++i) theta[p.offset + i] = u(rng);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward for one sample.

struct Workspace {
  std::vector<std::vector<double>> acts;   // acts[l] is the input of layer l; acts.back() the logits
  std::vector<std::vector<double>> grads;  // gradient w.r.t. acts[l]
  std::vector<double> probs;

  void prepare(const Model& m) {
    const auto& plan = m.layers();
    if (acts.size() == plan.size() + 1 && acts[0].size() == plan[0].in.size()) return;
    acts.assign(plan.size() + 1, {});
    grads.assign(plan.size() + 1, {});
    for (std::size_t l = 0; l < plan.size(); ++l) {
      acts[l].resize(plan[l].in.size());
      grads[l].resize(plan[l].in.size());
    }
    acts.back().resize(plan.back().out.size());
    grads.back().resize(plan.back().out.size());
    probs.resize(plan.back().out.size());
  }
};

namespace detail {

inline void dense_forward(const LayerPlan& p, const double* theta, const double* x, double* y) {
  const std::size_t in = p.spec.in, out = p.spec.out;
  const double* W = theta + p.offset;
  const double* b = W + p.weights;
  for (std::size_t o = 0; o < out; ++o) {
    const double* row = W + o * in;
    double acc = 0.0;
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc + b[o];
  }
}

inline void dense_backward(const LayerPlan& p, const double* theta, const double* x, const double* dy, double* dx,
                           double* g, double scale) {
  const std::size_t in = p.spec.in, out = p.spec.out;
  const double* W = theta + p.offset;
  double* gW = g + p.offset;
  double* gb = gW + p.weights;
  if (dx) std::fill(dx, dx + in, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    const double d = dy[o];
    if (d == 0.0) continue;
    const double ds = d * scale;
    double* grow = gW + o * in;
    for (std::size_t i = 0; i < in; ++i) grow[i] += ds * x[i];
    gb[o] += ds;
    if (dx) {
      const double* row = W + o * in;
      for (std::size_t i = 0; i < in; ++i) dx[i] += row[i] * d;
    }
  }
}

// weights laid out [out_ch][ky][kx][in_ch]
inline void conv_forward(const LayerPlan& p, const double* theta, const double* x, double* y) {
  const auto& s = p.spec;
  const double* W = theta + p.offset;
  const double* b = W + p.weights;
  const long H = static_cast<long>(p.in.height), Wd = static_cast<long>(p.in.width);
  const std::size_t Ci = s.in_channels, Co = s.out_channels, k = s.kernel;
  for (std::size_t oy = 0; oy < p.out.height; ++oy)
    for (std::size_t ox = 0; ox < p.out.width; ++ox) {
      double* yo = y + (oy * p.out.width + ox) * Co;
      for (std::size_t o = 0; o < Co; ++o) yo[o] = b[o];
      for (std::size_t ky = 0; ky < k; ++ky) {
        const long iy = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.padding);
        if (iy < 0 || iy >= H) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const long ix = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.padding);
          if (ix < 0 || ix >= Wd) continue;
          const double* xi = x + (iy * Wd + ix) * static_cast<long>(Ci);
          for (std::size_t o = 0; o < Co; ++o) {
            const double* w = W + ((o * k + ky) * k + kx) * Ci;
            double acc = 0.0;
            for (std::size_t c = 0; c < Ci; ++c) acc += w[c] * xi[c];
            yo[o] += acc;
          }
        }
      }
    }
}

inline void conv_backward(const LayerPlan& p, const double* theta, const double* x, const double* dy, double* dx,
                          double* g, double scale) {
  const auto& s = p.spec;
  const double* W = theta + p.offset;
  double* gW = g + p.offset;
  double* gb = gW + p.weights;
  const long H = static_cast<long>(p.in.height), Wd = static_cast<long>(p.in.width);
  const std::size_t Ci = s.in_channels, Co = s.out_channels, k = s.kernel;
  if (dx) std::fill(dx, dx + p.in.size(), 0.0);
  for (std::size_t oy = 0; oy < p.out.height; ++oy)
    for (std::size_t ox = 0; ox < p.out.width; ++ox) {
      const double* dyo = dy + (oy * p.out.width + ox) * Co;
      for (std::size_t o = 0; o < Co; ++o) gb[o] += scale * dyo[o];
      for (std::size_t ky = 0; ky < k; ++ky) {
        const long iy = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.padding);
        if (iy < 0 || iy >= H) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const long ix = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.padding);
          if (ix < 0 || ix >= Wd) continue;
          const std::size_t xoff = static_cast<std::size_t>((iy * Wd + ix) * static_cast<long>(Ci));
          for (std::size_t o = 0; o < Co; ++o) {
            const double d = dyo[o];
            const std::size_t woff = ((o * k + ky) * k + kx) * Ci;
            for (std::size_t c = 0; c < Ci; ++c) {
              gW[woff + c] += scale * d * x[xoff + c];
              if (dx) dx[xoff + c] += W[woff + c] * d;
            }
          }
        }
      }
    }
}

}  // namespace detail

// Runs the network on one image; returns the logits (owned by the workspace).
inline std::span<const double> forward_sample(const Model& m, std::span<const double> image, Workspace& ws) {
  ws.prepare(m);
  const auto& plan = m.layers();
  if (image.size() != plan[0].in.size())
    throw std::invalid_argument("input has " + std::to_string(image.size()) + " values, model expects " +
                                std::to_string(plan[0].in.size()));
  std::copy(image.begin(), image.end(), ws.acts[0].begin());
  const double* theta = m.params().data();
  for (std::size_t l = 0; l < plan.size(); ++l) {
    const auto& p = plan[l];
    const double* x = ws.acts[l].data();
    double* y = ws.acts[l + 1].data();
    switch (p.spec.kind) {
      case LayerKind::dense: detail::dense_forward(p, theta, x, y); break;
      case LayerKind::conv2d: detail::conv_forward(p, theta, x, y); break;
      case LayerKind::relu:
        for (std::size_t i = 0; i < p.in.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
        break;
      case LayerKind::flatten: std::copy(x, x + p.in.size(), y); break;
    }
  }
  return ws.acts.back();
}

// Accumulates scale * d(output . dlogits)/dtheta into g. Requires a preceding forward_sample on ws.
inline void backward_sample(const Model& m, Workspace& ws, std::span<const double> dlogits, std::span<double> g,
                            double scale = 1.0) {
  const auto& plan = m.layers();
  std::copy(dlogits.begin(), dlogits.end(), ws.grads.back().begin());
  const double* theta = m.params().data();
  // index of the first parameterised layer: nothing below it needs an input gradient
  std::size_t first_param = plan.size();
  for (std::size_t l = 0; l < plan.size(); ++l)
    if (plan[l].param_count() > 0) {
      first_param = l;
      break;
    }
  for (std::size_t l = plan.size(); l-- > 0;) {
    if (l < first_param) break;
    const auto& p = plan[l];
    const double* x = ws.acts[l].data();
    const double* dy = ws.grads[l + 1].data();
    double* dx = l > first_param ? ws.grads[l].data() : nullptr;
    switch (p.spec.kind) {
      case LayerKind::dense: detail::dense_backward(p, theta, x, dy, dx, g.data(), scale); break;
      case LayerKind::conv2d: detail::conv_backward(p, theta, x, dy, dx, g.data(), scale); break;
      case LayerKind::relu:
        for (std::size_t i = 0; i < p.in.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
        break;
      case LayerKind::flatten: std::copy(dy, dy + p.in.size(), dx); break;
    }
  }
}

inline void softmax(std::span<const double> z, std::span<double> p) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) sum += (p[i] = std::exp(z[i] - mx));
  for (double& v : p) v /= sum;
}

// argmax with ties to the lowest index
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline std::vector<double> logits(const Model& m, std::span<const double> image) {
  Workspace ws;
  auto z = forward_sample(m, image, ws);
  return {z.begin(), z.end()};
}

struct ProbabilityMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

inline void check_batch(const Model& m, const Batch& b) {
  if (b.size() == 0) throw std::invalid_argument("empty batch");
  if (!(b.shape == m.spec().input))
    throw std::invalid_argument("batch shape " + to_string(b.shape) + " does not match model input " +
                                to_string(m.spec().input));
  if (b.images.size() != b.size() * b.shape.size()) throw std::invalid_argument("batch image buffer size mismatch");
}

inline void check_label(const Model& m, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= m.spec().classes)
    throw std::out_of_range("label " + std::to_string(label) + " outside [0, " + std::to_string(m.spec().classes) +
                            ")");
}

inline ProbabilityMatrix forward(const Model& m, const Batch& b) {
  check_batch(m, b);
  ProbabilityMatrix out{b.size(), m.spec().classes, std::vector<double>(b.size() * m.spec().classes)};
  Workspace ws;
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto z = forward_sample(m, b.image(i), ws);
    softmax(z, {out.data.data() + i * out.cols, out.cols});
  }
  return out;
}

// Per-sample cross-entropy gradient written (not accumulated) into g. Returns the loss.
inline double sample_loss_gradient(const Model& m, std::span<const double> image, int label, Workspace& ws,
                                   std::span<double> g) {
  check_label(m, label);
  std::fill(g.begin(), g.end(), 0.0);
  auto z = forward_sample(m, image, ws);
  softmax(z, ws.probs);
  const double loss = -std::log(std::max(ws.probs[label], std::numeric_limits<double>::min()));
  ws.probs[label] -= 1.0;
  backward_sample(m, ws, ws.probs, g);
  return loss;
}

inline std::vector<double> loss_gradient(const Model& m, const Batch& b) {
  check_batch(m, b);
  for (int y : b.labels) check_label(m, y);
  std::vector<double> g(m.param_count(), 0.0);
  Workspace ws;
  const double scale = 1.0 / static_cast<double>(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto z = forward_sample(m, b.image(i), ws);
    softmax(z, ws.probs);
    ws.probs[b.labels[i]] -= 1.0;
    backward_sample(m, ws, ws.probs, g, scale);
  }
  return g;
}

inline double mean_loss(const Model& m, const Batch& b) {
  check_batch(m, b);
  Workspace ws;
  double total = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    check_label(m, b.labels[i]);
    auto z = forward_sample(m, b.image(i), ws);
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    total += -(z[b.labels[i]] - mx - std::log(s));
  }
  return total / static_cast<double>(b.size());
}

struct OutnormGradient {
  std::vector<double> gradient;
  bool degenerate = false;
  double norm = 0.0;
};

// Gradient of ||z||_2^w for the raw logits z, written into g. Returns true on the
// degenerate point z = 0 with w < 2, where g is left at zero.
inline bool sample_outnorm_gradient(const Model& m, std::span<const double> image, double w, Workspace& ws,
                                    std::span<double> g, double* norm_out = nullptr) {
  if (!(w > 0.0)) throw std::invalid_argument("outnorm exponent w must be positive");
  std::fill(g.begin(), g.end(), 0.0);
  auto z = forward_sample(m, image, ws);
  double sq = 0.0;
  for (double v : z) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm_out) *norm_out = norm;
  if (norm == 0.0) return w < 2.0;
  const double coef = w * std::pow(norm, w - 2.0);
  for (std::size_t i = 0; i < z.size(); ++i) ws.probs[i] = coef * z[i];
  backward_sample(m, ws, ws.probs, g);
  return false;
}

inline OutnormGradient outnorm_gradient(const Model& m, const Batch& b, double w) {
  check_batch(m, b);
  if (b.size() != 1) throw std::invalid_argument("outnorm_gradient takes a batch of size 1");
  OutnormGradient out;
  out.gradient.assign(m.param_count(), 0.0);
  Workspace ws;
  out.degenerate = sample_outnorm_gradient(m, b.image(0), w, ws, out.gradient, &out.norm);
  return out;
}

inline double output_norm_pow(const Model& m, std::span<const double> image, double w) {
  auto z = logits(m, image);
  double sq = 0.0;
  for (double v : z) sq += v * v;
  return std::pow(std::sqrt(sq), w);
}

// ---------------------------------------------------------------------------
// Training and evaluation.

enum class Optimizer { sgd, sgd_momentum };

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  Optimizer optimizer = Optimizer::sgd_momentum;
  double momentum = 0.9;
  std::uint64_t shuffle_seed = 0;
  bool operator==(const TrainConfig&) const = default;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train config: momentum must be in [0,1)");
  }
};

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
  bool operator==(const EpochStats&) const = default;
};

struct TrainResult {
  Model model;
  std::vector<EpochStats> history;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Trains `init` on the listed samples with their assigned labels.
inline TrainResult train(const Model& init, const Dataset& data, std::span<const std::size_t> idx,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (idx.empty()) throw std::invalid_argument("train: empty dataset");
  if (!(data.shape == init.spec().input)) throw std::invalid_argument("train: dataset shape does not match model");
  TrainResult res{init, {}};
  Model& m = res.model;
  const std::size_t n = idx.size(), P = m.param_count();
  std::vector<std::size_t> order(idx.begin(), idx.end());
  std::vector<double> grad(P), vel(P, 0.0);
  Workspace ws;
  Rng rng = make_rng(cfg.shuffle_seed, 0x5f);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t t = start; t < end; ++t) {
        const std::size_t s = order[t];
        const int y = data.assigned_labels[s];
        check_label(m, y);
        auto z = forward_sample(m, data.image(s), ws);
        if (argmax(z) == static_cast<std::size_t>(y)) ++correct;
        softmax(z, ws.probs);
        loss_sum += -std::log(std::max(ws.probs[y], std::numeric_limits<double>::min()));
        ws.probs[y] -= 1.0;
        backward_sample(m, ws, ws.probs, grad, scale);
      }
      auto theta = m.params();
      if (cfg.optimizer == Optimizer::sgd_momentum) {
        for (std::size_t i = 0; i < P; ++i) {
          vel[i] = cfg.momentum * vel[i] + grad[i];
          theta[i] -= cfg.learning_rate * vel[i];
        }
      } else {
        for (std::size_t i = 0; i < P; ++i) theta[i] -= cfg.learning_rate * grad[i];
      }
    }
    const double loss = loss_sum / static_cast<double>(n);
    if (!std::isfinite(loss))
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch + 1));
    res.history.push_back({loss, static_cast<double>(correct) / static_cast<double>(n)});
  }
  for (double v : m.params())
    if (!std::isfinite(v)) throw TrainingDiverged("training produced non-finite parameters");
  return res;
}

inline TrainResult train(const Model& init, const Dataset& data, const TrainConfig& cfg) {
  auto idx = all_indices(data.size());
  return train(init, data, idx, cfg);
}

inline std::size_t predict(const Model& m, std::span<const double> image, Workspace& ws) {
  return argmax(forward_sample(m, image, ws));
}

inline std::size_t count_correct(const Model& m, const Dataset& data, std::span<const std::size_t> idx,
                                 LabelMode mode) {
  Workspace ws;
  std::size_t correct = 0;
  for (std::size_t i : idx)
    if (predict(m, data.image(i), ws) == static_cast<std::size_t>(data.label(i, mode))) ++correct;
  return correct;
}

inline double evaluate_accuracy(const Model& m, const Dataset& data, std::span<const std::size_t> idx,
                                LabelMode mode) {
  if (idx.empty()) throw std::invalid_argument("evaluate_accuracy: empty dataset");
  return static_cast<double>(count_correct(m, data, idx, mode)) / static_cast<double>(idx.size());
}

inline double evaluate_accuracy(const Model& m, const Dataset& data, LabelMode mode) {
  auto idx = all_indices(data.size());
  return evaluate_accuracy(m, data, idx, mode);
}

// ---------------------------------------------------------------------------
// JSON and persistence.

inline json to_json(const LayerSpec& l) {
  json j = {{"kind", to_string(l.kind)}};
  if (l.kind == LayerKind::dense) {
    j["in"] = l.in;
    j["out"] = l.out;
  } else if (l.kind == LayerKind::conv2d) {
    j["in_channels"] = l.in_channels;
    j["out_channels"] = l.out_channels;
    j["kernel"] = l.kernel;
    j["stride"] = l.stride;
    j["padding"] = l.padding;
  }
  return j;
}

inline json to_json(const ModelSpec& s) {
  json layers = json::array();
  for (const auto& l : s.layers) layers.push_back(to_json(l));
  return {{"input", {{"height", s.input.height}, {"width", s.input.width}, {"channels", s.input.channels}}},
          {"classes", s.classes},
          {"seed", s.seed},
          {"layers", layers}};
}

inline LayerSpec layer_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  const std::string kind = r.get<std::string>("kind");
  LayerSpec l;
  if (kind == "dense") {
    l = LayerSpec::dense(r.get<std::size_t>("in"), r.get<std::size_t>("out"));
  } else if (kind == "conv2d") {
    l = LayerSpec::conv2d(r.get<std::size_t>("in_channels"), r.get<std::size_t>("out_channels"),
                          r.get<std::size_t>("kernel"), r.get_or<std::size_t>("stride", 1),
                          r.get_or<std::size_t>("padding", 0));
  } else if (kind == "relu") {
    l = LayerSpec::relu();
  } else if (kind == "flatten") {
    l = LayerSpec::flatten();
  } else {
    throw ConfigError(r.sub("kind"), "unknown layer kind '" + kind + "'");
  }
  r.finish();
  return l;
}

inline ModelSpec model_spec_from_json(const json& j, const std::string& path = "") {
  ObjectReader r(j, path);
  ModelSpec s;
  {
    ObjectReader in(r.at("input"), r.sub("input"));
    s.input = {in.get<std::size_t>("height"), in.get<std::size_t>("width"), in.get<std::size_t>("channels")};
    in.finish();
  }
  s.classes = r.get<std::size_t>("classes");
  s.seed = r.get_or<std::uint64_t>("seed", 0);
  const json& layers = r.at("layers");
  if (!layers.is_array()) throw ConfigError(r.sub("layers"), "expected an array");
  for (std::size_t i = 0; i < layers.size(); ++i)
    s.layers.push_back(layer_from_json(layers[i], r.sub("layers") + "[" + std::to_string(i) + "]"));
  r.finish();
  return s;
}

inline std::string Model::spec_json_string() const { return to_json(spec_).dump(); }

inline constexpr const char* kModelFormat = "potionlab-model";

// Writes <prefix>.json (spec, count, checksum) and <prefix>.f64 (parameters).
inline void save_model(const Model& m, const std::filesystem::path& prefix) {
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  const std::string blob = prefix.filename().string() + ".f64";
  json header = {{"format", kModelFormat},
                 {"version", 1},
                 {"spec", to_json(m.spec())},
                 {"param_count", m.param_count()},
                 {"params", blob},
                 {"checksum", m.checksum()}};
  write_blob<double>(prefix.string() + ".f64", m.params());
  std::ofstream(prefix.string() + ".json") << header.dump(2) << "\n";
}

inline Model load_model(const std::filesystem::path& prefix) {
  std::ifstream in(prefix.string() + ".json");
  if (!in) throw std::runtime_error("missing model header: " + prefix.string() + ".json");
  json h;
  try {
    in >> h;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed model header: ") + e.what());
  }
  if (h.value("format", "") != kModelFormat) throw std::runtime_error("not a potionlab model: " + prefix.string());
  Model m(model_spec_from_json(h.at("spec"), "spec"));
  const std::size_t n = h.at("param_count").get<std::size_t>();
  if (n != m.param_count()) throw std::runtime_error("model header parameter count disagrees with its spec");
  auto values = read_blob<double>(prefix.string() + ".f64", n);
  std::copy(values.begin(), values.end(), m.params().begin());
  if (m.checksum() != h.at("checksum").get<std::string>())
    throw std::runtime_error("model checksum mismatch: " + prefix.string());
  return m;
}

}  // namespace potionlab
