#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "data.hpp"
#include "nn.hpp"

namespace potionlab {

enum class Estimator { fim, outnorm };

inline std::string to_string(Estimator e) { return e == Estimator::fim ? "fim" : "outnorm"; }

inline Estimator estimator_from_string(const std::string& s) {
  if (s == "fim") return Estimator::fim;
  if (s == "outnorm") return Estimator::outnorm;
  throw std::invalid_argument("unknown estimator: " + s);
}

struct ImportanceVector {
  std::vector<double> values;
  Estimator estimator = Estimator::fim;
  std::optional<double> w;  // set iff estimator == outnorm
  std::size_t sample_count = 0;
  std::string dataset_id;

  std::size_t size() const { return values.size(); }
  std::string checksum() const { return checksum_of<double>(values); }
  bool operator==(const ImportanceVector&) const = default;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(std::size_t sample)
      : std::runtime_error("non-finite gradient at sample " + std::to_string(sample)), sample_(sample) {}
  std::size_t sample() const { return sample_; }

 private:
  std::size_t sample_;
};

namespace detail {

template <class PerSample>
std::vector<double> accumulate_importance(const Model& m, const Dataset& data, std::span<const std::size_t> idx,
                                          PerSample&& per_sample) {
  if (idx.empty()) throw std::invalid_argument("importance: empty dataset");
  if (!(data.shape == m.spec().input)) throw std::invalid_argument("importance: dataset shape does not match model");
  const std::size_t P = m.param_count();
  std::vector<double> sum(P, 0.0), g(P);
  Workspace ws;
  for (std::size_t i : idx) {
    per_sample(i, ws, std::span<double>(g));
    for (std::size_t j = 0; j < P; ++j)
      if (!std::isfinite(g[j])) throw NonFiniteGradient(i);
    for (std::size_t j = 0; j < P; ++j) sum[j] += g[j];
  }
  const double inv = 1.0 / static_cast<double>(idx.size());
  for (double& v : sum) v *= inv;
  return sum;
}

}  // namespace detail

// (1/N) sum of squared per-sample cross-entropy gradients, assigned labels.
inline ImportanceVector fim_diagonal(const Model& m, const Dataset& data, std::span<const std::size_t> idx) {
  ImportanceVector out;
  out.estimator = Estimator::fim;
  out.sample_count = idx.size();
  out.dataset_id = subset_id(data, idx);
  out.values = detail::accumulate_importance(m, data, idx, [&](std::size_t i, Workspace& ws, std::span<double> g) {
    sample_loss_gradient(m, data.image(i), data.assigned_labels[i], ws, g);
    for (double& v : g) v *= v;
  });
  return out;
}

// (1/N) sum of |d ||f(x)||^w / d theta|. Never reads labels.
inline ImportanceVector outnorm_importance(const Model& m, const Dataset& data, std::span<const std::size_t> idx,
                                           double w) {
  if (!(w > 0.0)) throw std::invalid_argument("outnorm exponent w must be positive");
  ImportanceVector out;
  out.estimator = Estimator::outnorm;
  out.w = w;
  out.sample_count = idx.size();
  // images only: relabelling leaves the id (and the vector) unchanged
  Checksum c;
  for (std::size_t i : idx) c.update_values<double>(data.image(i));
  out.dataset_id = c.hex();
  out.values = detail::accumulate_importance(m, data, idx, [&](std::size_t i, Workspace& ws, std::span<double> g) {
    sample_outnorm_gradient(m, data.image(i), w, ws, g);
    for (double& v : g) v = std::abs(v);
  });
  return out;
}

inline ImportanceVector fim_diagonal(const Model& m, const Dataset& data) {
  auto idx = all_indices(data.size());
  return fim_diagonal(m, data, idx);
}

inline ImportanceVector outnorm_importance(const Model& m, const Dataset& data, double w) {
  auto idx = all_indices(data.size());
  return outnorm_importance(m, data, idx, w);
}

// fim, or outnorm with exponent w
inline ImportanceVector compute_importance(const Model& m, const Dataset& data, std::span<const std::size_t> idx,
                                           Estimator e, double w) {
  return e == Estimator::fim ? fim_diagonal(m, data, idx) : outnorm_importance(m, data, idx, w);
}

// ---------------------------------------------------------------------------
// Percentiles and tail statistics.

// Linear interpolation between order statistics; `sorted` must be ascending.
inline double percentile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("percentile of empty data");
  if (!(p >= 0.0 && p <= 100.0)) throw std::invalid_argument("percentile outside [0,100]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p / 100.0;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double percentile(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  return percentile_sorted(values, p);
}

struct TailStats {
  double excess_kurtosis = 0.0;
  double p99_over_p50 = 0.0;
  double p999_over_p50 = 0.0;
  double fraction_below_1e3 = 0.0;
};

class DegenerateInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline TailStats tail_stats(std::span<const double> values) {
  if (values.size() < 100) throw std::invalid_argument("tail_stats needs at least 100 values");
  const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
  const double mn = *mn_it, mx = *mx_it;
  if (!(mx > mn)) throw DegenerateInput("tail_stats: constant input");
  std::vector<double> s(values.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = (values[i] - mn) / (mx - mn);

  const double n = static_cast<double>(s.size());
  double mean = 0.0;
  for (double v : s) mean += v;
  mean /= n;
  double m2 = 0.0, m4 = 0.0;
  std::size_t below = 0;
  for (double v : s) {
    const double d = v - mean, d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
    if (v < 1e-3) ++below;
  }
  m2 /= n;
  m4 /= n;

  std::sort(s.begin(), s.end());
  const double p50 = percentile_sorted(s, 50.0);
  const double inf = std::numeric_limits<double>::infinity();
  TailStats t;
  t.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  t.p99_over_p50 = p50 > 0.0 ? percentile_sorted(s, 99.0) / p50 : inf;
  t.p999_over_p50 = p50 > 0.0 ? percentile_sorted(s, 99.9) / p50 : inf;
  t.fraction_below_1e3 = static_cast<double>(below) / n;
  return t;
}

// ---------------------------------------------------------------------------
// Persistence: <prefix>.json header + <prefix>.f64 values.

inline constexpr const char* kImportanceFormat = "potionlab-importance";

inline void save_importance(const ImportanceVector& v, const std::filesystem::path& prefix) {
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  json h = {{"format", kImportanceFormat},
            {"version", 1},
            {"estimator", to_string(v.estimator)},
            {"w", v.w ? json(*v.w) : json(nullptr)},
            {"sample_count", v.sample_count},
            {"param_count", v.values.size()},
            {"dataset_id", v.dataset_id},
            {"values", prefix.filename().string() + ".f64"},
            {"checksum", v.checksum()}};
  write_blob<double>(prefix.string() + ".f64", v.values);
  std::ofstream(prefix.string() + ".json") << h.dump(2) << "\n";
}

inline ImportanceVector load_importance(const std::filesystem::path& prefix) {
  std::ifstream in(prefix.string() + ".json");
  if (!in) throw std::runtime_error("missing importance header: " + prefix.string() + ".json");
  json h;
  try {
    in >> h;
    if (h.value("format", "") != kImportanceFormat) throw std::runtime_error("not an importance vector");
    ImportanceVector v;
    v.estimator = estimator_from_string(h.at("estimator").get<std::string>());
    if (!h.at("w").is_null()) v.w = h.at("w").get<double>();
    v.sample_count = h.at("sample_count").get<std::size_t>();
    v.dataset_id = h.at("dataset_id").get<std::string>();
    v.values = read_blob<double>(prefix.string() + ".f64", h.at("param_count").get<std::size_t>());
    if (v.checksum() != h.at("checksum").get<std::string>())
      throw std::runtime_error("importance checksum mismatch: " + prefix.string());
    return v;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed importance header: ") + e.what());
  }
}

}  // namespace potionlab
