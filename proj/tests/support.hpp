#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "potionlab/potionlab.hpp"

namespace potionlab::testing {

// Small random architecture: alternates between an MLP and a conv net.
inline ModelSpec random_spec(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> classes(2, 5);
  const std::size_t k = classes(rng);
  if (seed % 2 == 0) {
    std::uniform_int_distribution<std::size_t> width(2, 8), hidden(2, 12);
    const Shape3 in{width(rng), 1, 1};
    return mlp_spec(in, {hidden(rng), hidden(rng)}, k, seed);
  }
  ModelSpec s;
  s.input = {5, 5, 2};
  s.classes = k;
  s.seed = seed;
  s.layers = {LayerSpec::conv2d(2, 3, 3, 1, 1), LayerSpec::relu(), LayerSpec::conv2d(3, 2, 2, 2, 0),
              LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(8, k)};
  return s;
}

// Random model with biases moved off zero so every term of the gradient is exercised.
inline Model random_model(std::uint64_t seed) {
  Model m = build_model(random_spec(seed));
  Rng rng(seed ^ 0xb1a5);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (const auto& p : m.layers())
    for (std::size_t i = 0; i < p.biases; ++i) m.params()[p.offset + p.weights + i] = u(rng);
  return m;
}

inline Batch random_batch(const Model& m, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> px(0.0, 1.0);
  std::uniform_int_distribution<int> lab(0, static_cast<int>(m.spec().classes) - 1);
  Batch b;
  b.shape = m.spec().input;
  for (std::size_t i = 0; i < n * b.shape.size(); ++i) b.images.push_back(px(rng));
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(lab(rng));
  return b;
}

inline Dataset dataset_from_batch(const Batch& b, std::size_t classes) {
  return make_dataset(b.shape, classes, b.images, b.labels);
}

// Central differences of f at m.params(), one coordinate at a time.
inline std::vector<double> finite_difference(const Model& m, const std::function<double(const Model&)>& f,
                                             double h = 1e-5) {
  Model probe = m;
  std::vector<double> g(m.param_count());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = probe.params()[i];
    probe.params()[i] = x + h;
    const double up = f(probe);
    probe.params()[i] = x - h;
    const double down = f(probe);
    probe.params()[i] = x;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||)
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

// Two well separated classes of 4x4 images: bright left half vs bright right half.
inline Dataset separable_two_class(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  const Shape3 shape{4, 4, 1};
  std::vector<double> px;
  std::vector<int> labels;
  for (std::size_t s = 0; s < n; ++s) {
    const int y = static_cast<int>(s % 2);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        const bool lit = (c < 2) == (y == 0);
        px.push_back(std::clamp((lit ? 0.8 : 0.2) + noise(rng), 0.0, 1.0));
      }
    labels.push_back(y);
  }
  return make_dataset(shape, 2, std::move(px), std::move(labels));
}

// Uniform pseudo-outputs as per-sample parameters: a dense layer over one-hot inputs whose
// column k is the output vector z_k of sample k. Returns the min-max tail statistics of the
// outnorm importance restricted to the weight block.
inline TailStats pseudo_output_tails(double w, std::uint64_t seed, std::size_t samples = 1000,
                                     std::size_t outputs = 10) {
  ModelSpec spec{{1, samples, 1}, outputs, {LayerSpec::dense(samples, outputs)}, 0};
  Model m(spec);
  Rng rng = make_rng(seed, 0x70);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < samples * outputs; ++i) m.params()[i] = u(rng);
  std::vector<double> px(samples * samples, 0.0);
  for (std::size_t k = 0; k < samples; ++k) px[k * samples + k] = 1.0;
  Dataset d = make_dataset(spec.input, outputs, std::move(px), std::vector<int>(samples, 0));
  auto imp = outnorm_importance(m, d, w);
  return tail_stats(std::span<const double>(imp.values.data(), samples * outputs));
}

}  // namespace potionlab::testing
