#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "importance.hpp"
#include "nn.hpp"

namespace potionlab {

// Forget importances at or below this never enter the ratio distribution.
inline constexpr double kForgetEpsilon = 1e-12;

// s_iter -> percentile: clamp(100 - log10(1 + 100 s), 0, 100)
inline double percentile_from_siter(double s_iter) {
  if (!(s_iter > 0.0)) throw std::invalid_argument("s_iter must be positive");
  return std::clamp(100.0 - std::log10(1.0 + 100.0 * s_iter), 0.0, 100.0);
}

// The s_iter at which the percentile reaches 0.
inline double siter_at_zero_percentile() { return (std::pow(10.0, 100.0) - 1.0) / 100.0; }

class EmptyRatio : public std::runtime_error {
 public:
  EmptyRatio() : std::runtime_error("no parameter has forget importance above epsilon") {}
};

// Sorted retain/forget ratios over indices with forget > epsilon.
class RatioDistribution {
 public:
  RatioDistribution(const ImportanceVector& retain, const ImportanceVector& forget) {
    if (retain.size() != forget.size()) throw std::invalid_argument("importance vectors differ in length");
    for (std::size_t i = 0; i < retain.size(); ++i)
      if (forget.values[i] > kForgetEpsilon) sorted_.push_back(retain.values[i] / forget.values[i]);
    if (sorted_.empty()) throw EmptyRatio();
    std::sort(sorted_.begin(), sorted_.end());
  }

  double alpha(double p) const { return percentile_sorted(sorted_, p); }
  std::size_t size() const { return sorted_.size(); }
  std::span<const double> sorted() const { return sorted_; }

 private:
  std::vector<double> sorted_;
};

inline double select_alpha(const ImportanceVector& retain, const ImportanceVector& forget, double p) {
  return RatioDistribution(retain, forget).alpha(p);
}

struct DampeningOutcome {
  Model model;
  std::size_t modified = 0;
  std::vector<std::uint8_t> bitmap;
  double alpha = 0.0;
  double lambda = 1.0;
};

inline bool is_noop_alpha(double alpha) { return std::isinf(alpha) && alpha > 0; }

// Shrinks parameter i by beta = min(lambda r_i / f_i, 1) when f_i > alpha r_i.
inline DampeningOutcome dampen(const Model& m, const ImportanceVector& retain, const ImportanceVector& forget,
                               double alpha, double lambda = 1.0) {
  if (!(alpha > 0.0)) throw std::invalid_argument("dampen: alpha must be positive");
  if (!(lambda > 0.0)) throw std::invalid_argument("dampen: lambda must be positive");
  const std::size_t P = m.param_count();
  if (retain.size() != P || forget.size() != P)
    throw std::invalid_argument("dampen: importance length does not match the model");
  DampeningOutcome out{m, 0, std::vector<std::uint8_t>(P, 0), alpha, lambda};
  if (is_noop_alpha(alpha)) return out;
  auto theta = out.model.params();
  const double* r = retain.values.data();
  const double* f = forget.values.data();
  for (std::size_t i = 0; i < P; ++i) {
    if (f[i] > alpha * r[i]) {
      const double beta = std::min(lambda * r[i] / f[i], 1.0);
      theta[i] *= beta;
      out.bitmap[i] = 1;
      ++out.modified;
    }
  }
  return out;
}

}  // namespace potionlab
