#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dampening.hpp"
#include "importance.hpp"
#include "nn.hpp"

namespace potionlab {

struct PTNConfig {
  double rho = 0.2;
  double b_start = 25.0;
  double s_step = 1.1;
  std::optional<double> s_max;  // unset: run until the percentile clamps to 0
  double lambda = 1.0;
  Estimator estimator = Estimator::outnorm;
  double w = 1.0;
  std::size_t parallel = 1;
  bool operator==(const PTNConfig&) const = default;

  void validate() const {
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("ptn: rho must be in (0,1]");
    if (!(b_start > 0.0)) throw std::invalid_argument("ptn: b_start must be positive");
    if (!(s_step > 1.0)) throw std::invalid_argument("ptn: s_step must exceed 1");
    if (s_max && !(*s_max > 0.0)) throw std::invalid_argument("ptn: s_max must be positive");
    if (!(lambda > 0.0)) throw std::invalid_argument("ptn: lambda must be positive");
    if (estimator == Estimator::outnorm && !(w > 0.0)) throw std::invalid_argument("ptn: w must be positive");
    if (parallel < 1) throw std::invalid_argument("ptn: parallel width must be >= 1");
  }
};

enum class SearchStatus { converged, exhausted };

inline std::string to_string(SearchStatus s) { return s == SearchStatus::converged ? "converged" : "exhausted"; }

struct PTNRecord {
  double s_iter = 0.0;
  double p = 0.0;
  double alpha = 0.0;
  std::size_t modified = 0;
  double acc_forget = 0.0;
  bool crossed = false;
  double seconds = 0.0;
};

struct PTNTrace {
  std::vector<PTNRecord> records;  // ladder order
  SearchStatus status = SearchStatus::exhausted;
  std::size_t selected = 0;        // index into records
  double acc_original = 0.0;
  double threshold = 0.0;          // rho * acc_original
  double s_start = 0.0;
  double s_max = 0.0;
  std::size_t forget_count = 0;
  std::size_t train_size = 0;

  std::size_t iterations() const { return records.size(); }
  const PTNRecord& chosen() const { return records.at(selected); }
};

struct PTNResult {
  Model model;
  PTNTrace trace;
  std::vector<std::uint8_t> bitmap;
  ImportanceVector forget_importance;
};

inline double ptn_s_start(std::size_t forget_count, std::size_t train_size, double b_start) {
  return static_cast<double>(forget_count) / static_cast<double>(train_size) * b_start;
}

inline std::size_t ptn_iteration_bound(double s_start, double s_max, double s_step) {
  return static_cast<std::size_t>(std::ceil(std::log(s_max / s_start) / std::log(s_step))) + 1;
}

namespace detail {

struct Candidate {
  PTNRecord record;
  DampeningOutcome outcome;
};

inline Candidate evaluate_candidate(const Model& original, const ImportanceVector& retain,
                                    const ImportanceVector& forget, const RatioDistribution& ratios,
                                    const Dataset& data, std::span<const std::size_t> forget_idx, double s_iter,
                                    double lambda, double threshold) {
  const auto t0 = std::chrono::steady_clock::now();
  Candidate c;
  c.record.s_iter = s_iter;
  c.record.p = percentile_from_siter(s_iter);
  c.record.alpha = ratios.alpha(c.record.p);
  c.outcome = dampen(original, retain, forget, c.record.alpha, lambda);
  c.record.modified = c.outcome.modified;
  c.record.acc_forget = evaluate_accuracy(c.outcome.model, data, forget_idx, LabelMode::assigned);
  c.record.crossed = c.record.acc_forget <= threshold;
  c.record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

// lowest forget accuracy, then fewest modified; earlier wins ties
inline bool better(const PTNRecord& a, const PTNRecord& b) {
  return a.acc_forget < b.acc_forget || (a.acc_forget == b.acc_forget && a.modified < b.modified);
}

}  // namespace detail

// Geometric dampening search with a precomputed forget importance. parallel > 1 evaluates the ladder in
// waves of that many concurrent candidates and keeps the crossing with the fewest
// modified parameters from the first wave that has one.
inline PTNResult ptn_search(const Model& original, const ImportanceVector& retain, const ImportanceVector& forget,
                            const Dataset& data, std::span<const std::size_t> forget_idx,
                            std::size_t full_train_size, const PTNConfig& cfg) {
  cfg.validate();
  if (forget_idx.empty()) throw std::invalid_argument("ptn: empty forget set");
  if (full_train_size < forget_idx.size()) throw std::invalid_argument("ptn: train size smaller than forget set");
  if (retain.size() != original.param_count() || forget.size() != original.param_count())
    throw std::invalid_argument("ptn: importance length does not match the model");

  const RatioDistribution ratios(retain, forget);
  PTNTrace trace;
  trace.forget_count = forget_idx.size();
  trace.train_size = full_train_size;
  trace.s_start = ptn_s_start(forget_idx.size(), full_train_size, cfg.b_start);
  trace.s_max = cfg.s_max.value_or(siter_at_zero_percentile());
  if (!(trace.s_max >= trace.s_start)) throw std::invalid_argument("ptn: s_max below s_start");
  trace.acc_original = evaluate_accuracy(original, data, forget_idx, LabelMode::assigned);
  trace.threshold = cfg.rho * trace.acc_original;

  std::optional<detail::Candidate> selected, best;
  std::size_t best_index = 0;
  double s = trace.s_start;
  while (s <= trace.s_max) {
    std::vector<double> ladder;
    for (std::size_t j = 0; j < cfg.parallel && s <= trace.s_max; ++j) {
      ladder.push_back(s);
      s *= cfg.s_step;
    }
    std::vector<detail::Candidate> wave(ladder.size());
    auto run = [&](std::size_t j) {
      wave[j] = detail::evaluate_candidate(original, retain, forget, ratios, data, forget_idx, ladder[j], cfg.lambda,
                                           trace.threshold);
    };
    if (wave.size() == 1) {
      run(0);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t j = 0; j < wave.size(); ++j) pool.emplace_back(run, j);
      for (auto& t : pool) t.join();
    }
    const std::size_t base = trace.records.size();
    std::optional<std::size_t> pick;
    for (std::size_t j = 0; j < wave.size(); ++j) {
      trace.records.push_back(wave[j].record);
      if (wave[j].record.crossed && (!pick || wave[j].record.modified < wave[*pick].record.modified)) pick = j;
    }
    if (pick) {
      trace.status = SearchStatus::converged;
      trace.selected = base + *pick;
      selected = std::move(wave[*pick]);
      break;
    }
    for (std::size_t j = 0; j < wave.size(); ++j) {
      if (!best || detail::better(wave[j].record, best->record)) {
        best_index = base + j;
        best = std::move(wave[j]);
      }
    }
  }
  if (trace.records.empty()) throw std::logic_error("ptn: empty ladder");

  PTNResult out;
  if (trace.status == SearchStatus::exhausted) trace.selected = best_index;
  const detail::Candidate& c = trace.status == SearchStatus::converged ? *selected : *best;
  out.model = c.outcome.model;
  out.bitmap = c.outcome.bitmap;
  out.trace = std::move(trace);
  out.forget_importance = forget;
  return out;
}

// Computes the forget importance once, then searches.
inline PTNResult ptn_search(const Model& original, const ImportanceVector& retain, const Dataset& data,
                            std::span<const std::size_t> forget_idx, std::size_t full_train_size,
                            const PTNConfig& cfg) {
  cfg.validate();
  auto forget = compute_importance(original, data, forget_idx, cfg.estimator, cfg.w);
  return ptn_search(original, retain, forget, data, forget_idx, full_train_size, cfg);
}

inline PTNResult ptn_parallel(const Model& original, const ImportanceVector& retain, const Dataset& data,
                              std::span<const std::size_t> forget_idx, std::size_t full_train_size,
                              const PTNConfig& cfg) {
  return ptn_search(original, retain, data, forget_idx, full_train_size, cfg);
}

inline json to_json(const PTNTrace& t) {
  json recs = json::array();
  for (const auto& r : t.records)
    recs.push_back({{"s_iter", r.s_iter},
                    {"p", r.p},
                    {"alpha", r.alpha},
                    {"modified", r.modified},
                    {"acc_forget", r.acc_forget},
                    {"crossed", r.crossed},
                    {"seconds", r.seconds}});
  return {{"status", to_string(t.status)},
          {"selected", t.selected},
          {"acc_original", t.acc_original},
          {"threshold", t.threshold},
          {"s_start", t.s_start},
          {"s_max", t.s_max},
          {"forget_count", t.forget_count},
          {"train_size", t.train_size},
          {"records", recs}};
}

}  // namespace potionlab
