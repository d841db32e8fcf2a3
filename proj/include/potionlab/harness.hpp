#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dampening.hpp"
#include "data.hpp"
#include "importance.hpp"
#include "nn.hpp"
#include "poison.hpp"
#include "ptn.hpp"

namespace potionlab {

enum class Method { ptn_ssd, ptn_lf, ptn_xlf, ssd_grid, eu, none };

inline const std::vector<Method>& all_methods() {
  static const std::vector<Method> m{Method::ptn_xlf, Method::ptn_lf, Method::ptn_ssd,
                                     Method::ssd_grid, Method::eu,     Method::none};
  return m;
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::ptn_ssd: return "ptn_ssd";
    case Method::ptn_lf: return "ptn_lf";
    case Method::ptn_xlf: return "ptn_xlf";
    case Method::ssd_grid: return "ssd_grid";
    case Method::eu: return "eu";
    case Method::none: return "none";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  for (Method m : all_methods())
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown method: " + s);
}

inline bool is_ptn(Method m) { return m == Method::ptn_ssd || m == Method::ptn_lf || m == Method::ptn_xlf; }

// Importance estimator implied by a PTN method: SSD uses the Fisher diagonal,
// LF the squared output norm, XLF the plain norm.
inline void apply_method_estimator(Method m, PTNConfig& cfg) {
  switch (m) {
    case Method::ptn_ssd: cfg.estimator = Estimator::fim; break;
    case Method::ptn_lf:
      cfg.estimator = Estimator::outnorm;
      cfg.w = 2.0;
      break;
    case Method::ptn_xlf:
      cfg.estimator = Estimator::outnorm;
      cfg.w = 1.0;
      break;
    default: break;
  }
}

struct DataConfig {
  std::optional<BlobConfig> blobs = BlobConfig{};
  std::string path;  // dataset directory with train/test splits, used when blobs is unset

  std::string key() const {
    if (blobs) {
      const auto& b = *blobs;
      std::ostringstream os;
      os << "blobs:" << b.classes << ':' << b.train << ':' << b.test << ':' << b.size << ':' << b.channels << ':'
         << b.seed << ':' << format_number(b.noise) << ':' << format_number(b.jitter) << ':'
         << format_number(b.sigma);
      return os.str();
    }
    return "path:" + path;
  }
  bool operator==(const DataConfig& o) const { return key() == o.key(); }
};

struct GridConfig {
  std::vector<double> alphas{0.1, 1, 10, 50, 100, 500, 1000, 1e4, 1e5, 1e6};
  std::vector<double> lambda_multipliers{0.1, 0.5, 1, 5, 10};
  double validation_fraction = 0.1;
  bool operator==(const GridConfig&) const = default;
};

struct SeedSet {
  std::uint64_t train = 0;
  std::uint64_t poison = 0;
  std::uint64_t discovery = 0;
  std::uint64_t search = 0;
  bool operator==(const SeedSet&) const = default;

  static SeedSet all(std::uint64_t s) { return {s, s, s, s}; }
  std::string tuple() const {
    return std::to_string(train) + ":" + std::to_string(poison) + ":" + std::to_string(discovery) + ":" +
           std::to_string(search);
  }
};

inline ModelSpec default_model_spec(Shape3 input, std::size_t classes) {
  return mlp_spec(input, {32}, classes, 0);
}

struct ScenarioConfig {
  std::string id = "scenario";
  DataConfig data;
  std::optional<ModelSpec> model;  // unset: 1-hidden-layer MLP (32 units) sized to the data
  TrainConfig train;
  AttackSpec attack;
  std::size_t poison_count = 100;
  Discovery discovery = Discovery::fraction(1.0);
  Method method = Method::ptn_xlf;
  PTNConfig ptn;
  GridConfig grid;
  SeedSet seeds;
  bool exclude_target = true;
  bool operator==(const ScenarioConfig&) const = default;
};

struct ScenarioResult {
  std::string id;
  Method method = Method::none;
  AttackKind attack = AttackKind::badnet;
  std::size_t poison_count = 0;
  std::string discovery;
  std::size_t forget_count = 0;
  double healed_pct = 0.0;
  double damage_pts = 0.0;
  double acc_forget_before = 0.0;
  double acc_forget_after = 0.0;
  double acc_clean_model = 0.0;
  double acc_clean_original = 0.0;
  double acc_poisoned_model = 0.0;
  double acc_poisoned_oracle = 0.0;
  std::optional<double> alpha;
  std::optional<double> lambda;
  std::size_t modified_count = 0;
  std::size_t iterations = 0;
  double t_importance_s = 0.0;
  double t_search_s = 0.0;
  double t_total_s = 0.0;
  std::string seeds;
  std::string status = "ok";  // converged / exhausted for PTN, ok otherwise, error on failure
  std::string error;
  std::optional<PTNTrace> trace;
  json grid;  // per-pair scores for ssd_grid
  bool failed() const { return status == "error"; }
};

class PhaseError : public std::runtime_error {
 public:
  PhaseError(std::string phase, const std::string& what)
      : std::runtime_error(phase + ": " + what), phase_(std::move(phase)) {}
  const std::string& phase() const { return phase_; }

 private:
  std::string phase_;
};

inline double poison_healed(const Model& model, const Model& oracle, const Dataset& test_poisoned) {
  const double oracle_acc = evaluate_accuracy(oracle, test_poisoned, LabelMode::clean);
  if (oracle_acc == 0.0) throw std::domain_error("healed %: oracle accuracy on poisoned test data is 0");
  return 100.0 * evaluate_accuracy(model, test_poisoned, LabelMode::clean) / oracle_acc;
}

inline double model_damage(const Model& model, const Model& original, const Dataset& test_clean) {
  return 100.0 * (evaluate_accuracy(model, test_clean, LabelMode::clean) -
                  evaluate_accuracy(original, test_clean, LabelMode::clean));
}

struct GridEntry {
  double alpha = 0.0, lambda = 0.0;
  double acc_forget = 0.0, acc_validation = 0.0, score = 0.0;
  std::size_t modified = 0;
};

struct GridOutcome {
  Model model;
  std::vector<GridEntry> entries;
  std::size_t selected = 0;
  double acc_forget_original = 0.0, acc_validation_original = 0.0;
};

// score = 0.5 * (drop in forget accuracy) + 0.5 * (change in validation accuracy); first maximum wins
inline double grid_score(double acc_f0, double acc_f, double acc_v0, double acc_v) {
  return 0.5 * (acc_f0 - acc_f) + 0.5 * (acc_v - acc_v0);
}

inline GridOutcome ssd_grid_search(const Model& original, const ImportanceVector& retain,
                                   const ImportanceVector& forget, const Dataset& data,
                                   std::span<const std::size_t> forget_idx, std::span<const std::size_t> val_idx,
                                   const GridConfig& grid) {
  if (grid.alphas.empty() || grid.lambda_multipliers.empty()) throw std::invalid_argument("grid: empty axis");
  GridOutcome out;
  out.acc_forget_original = evaluate_accuracy(original, data, forget_idx, LabelMode::assigned);
  out.acc_validation_original = evaluate_accuracy(original, data, val_idx, LabelMode::assigned);
  std::optional<DampeningOutcome> best;
  for (double a : grid.alphas) {
    for (double mult : grid.lambda_multipliers) {
      const double lam = is_noop_alpha(a) ? 1.0 : mult * a;
      auto d = dampen(original, retain, forget, a, lam);
      GridEntry e{a, lam, evaluate_accuracy(d.model, data, forget_idx, LabelMode::assigned),
                  evaluate_accuracy(d.model, data, val_idx, LabelMode::assigned), 0.0, d.modified};
      e.score = grid_score(out.acc_forget_original, e.acc_forget, out.acc_validation_original, e.acc_validation);
      out.entries.push_back(e);
      if (!best || e.score > out.entries[out.selected].score) {
        out.selected = out.entries.size() - 1;
        best = std::move(d);
      }
    }
  }
  out.model = std::move(best->model);
  return out;
}

// ---------------------------------------------------------------------------
// Shared, write-once caches; optional on-disk mirror.

template <class T>
class OnceCache {
 public:
  T get(const std::string& key, const std::function<T()>& make) {
    std::shared_future<T> fut;
    std::promise<T> promise;
    bool owner = false;
    {
      std::lock_guard lock(mu_);
      auto it = map_.find(key);
      if (it == map_.end()) {
        fut = promise.get_future().share();
        map_.emplace(key, fut);
        owner = true;
      } else {
        fut = it->second;
      }
    }
    if (owner) {
      try {
        promise.set_value(make());
      } catch (...) {
        promise.set_exception(std::current_exception());
        std::lock_guard lock(mu_);
        map_.erase(key);
      }
    }
    return fut.get();
  }
  std::size_t size() const {
    std::lock_guard lock(mu_);
    return map_.size();
  }
  void clear() {
    std::lock_guard lock(mu_);
    map_.clear();
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::shared_future<T>> map_;
};

inline std::string cache_key(std::initializer_list<std::string> parts) {
  Checksum c;
  for (const auto& p : parts) {
    c.update(p);
    c.update("|");
  }
  return c.hex();
}

inline std::string train_config_key(const TrainConfig& t) {
  return std::to_string(t.epochs) + ":" + std::to_string(t.batch_size) + ":" + format_number(t.learning_rate) +
         ":" + std::to_string(static_cast<int>(t.optimizer)) + ":" + format_number(t.momentum) + ":" +
         std::to_string(t.shuffle_seed);
}

class Lab {
 public:
  explicit Lab(std::optional<std::filesystem::path> cache_dir = std::nullopt) : cache_dir_(std::move(cache_dir)) {}

  const std::optional<std::filesystem::path>& cache_dir() const { return cache_dir_; }

  std::shared_ptr<const CleanData> clean_data(const DataConfig& cfg) {
    return data_.get(cfg.key(), [&] {
      if (cfg.blobs) return std::make_shared<const CleanData>(generate_blobs(*cfg.blobs));
      auto train = load_split(cfg.path, "train");
      auto test = load_split(cfg.path, "test");
      train.split = Split::train;
      test.split = Split::test_clean;
      return std::make_shared<const CleanData>(CleanData{std::move(train), std::move(test)});
    });
  }

  Model trained_model(const ModelSpec& spec, const TrainConfig& tc, const Dataset& data,
                      std::span<const std::size_t> idx) {
    const std::string key = cache_key({"model", to_json(spec).dump(), train_config_key(tc), subset_id(data, idx)});
    return *models_.get(key, [&] {
      const auto path = disk_path("model-" + key);
      if (path && std::filesystem::exists(path->string() + ".json"))
        return std::make_shared<const Model>(load_model(*path));
      auto m = std::make_shared<const Model>(train(build_model(spec), data, idx, tc).model);
      if (path) save_model(*m, *path);
      ++trainings_;
      return m;
    });
  }

  ImportanceVector importance(const Model& m, const Dataset& data, std::span<const std::size_t> idx, Estimator e,
                              double w) {
    const std::string key = cache_key({"importance", m.checksum(), subset_id(data, idx), to_string(e),
                                       e == Estimator::outnorm ? format_number(w) : std::string("-")});
    return *importances_.get(key, [&] {
      const auto path = disk_path("importance-" + key);
      if (path && std::filesystem::exists(path->string() + ".json"))
        return std::make_shared<const ImportanceVector>(load_importance(*path));
      auto v = std::make_shared<const ImportanceVector>(compute_importance(m, data, idx, e, w));
      if (path) save_importance(*v, *path);
      return v;
    });
  }

  std::size_t trainings() const { return trainings_; }

  void clear_memory() {
    data_.clear();
    models_.clear();
    importances_.clear();
  }

 private:
  std::optional<std::filesystem::path> disk_path(const std::string& name) const {
    if (!cache_dir_) return std::nullopt;
    return *cache_dir_ / name;
  }

  std::optional<std::filesystem::path> cache_dir_;
  OnceCache<std::shared_ptr<const CleanData>> data_;
  OnceCache<std::shared_ptr<const Model>> models_;
  OnceCache<std::shared_ptr<const ImportanceVector>> importances_;
  std::atomic<std::size_t> trainings_{0};
};

inline Scenario make_scenario(Lab& lab, const ScenarioConfig& cfg) {
  auto clean = lab.clean_data(cfg.data);
  return build_scenario(clean->train, clean->test, cfg.attack, cfg.poison_count, cfg.discovery,
                        {cfg.seeds.poison, cfg.seeds.discovery}, cfg.exclude_target);
}

inline ModelSpec resolve_model_spec(const ScenarioConfig& cfg, const Dataset& train) {
  ModelSpec spec = cfg.model ? *cfg.model : default_model_spec(train.shape, train.classes);
  if (!(spec.input == train.shape) || spec.classes != train.classes)
    throw std::invalid_argument("model spec does not match the dataset (" + to_string(train.shape) + ", " +
                                std::to_string(train.classes) + " classes)");
  spec.seed = cfg.seeds.train;
  return spec;
}

inline TrainConfig resolve_train_config(const ScenarioConfig& cfg) {
  TrainConfig tc = cfg.train;
  tc.shuffle_seed = cfg.seeds.train;
  return tc;
}

inline std::vector<std::size_t> complement(std::size_t n, const std::vector<std::size_t>& removed) {
  std::vector<std::uint8_t> drop(n, 0);
  for (std::size_t i : removed) drop[i] = 1;
  return indices_where(drop, false);
}

inline std::vector<std::size_t> validation_indices(std::size_t n, double fraction, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x7a);
  const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::round(fraction * static_cast<double>(n))));
  return sample_indices(rng, n, std::min(k, n));
}

namespace detail {
inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}
}  // namespace detail

// Train (or fetch) poisoned and oracle models, apply the method, score it.
inline ScenarioResult run_scenario(Lab& lab, const ScenarioConfig& cfg) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  ScenarioResult r;
  r.id = cfg.id;
  r.method = cfg.method;
  r.attack = cfg.attack.kind;
  r.poison_count = cfg.poison_count;
  r.discovery = cfg.discovery.label();
  r.seeds = cfg.seeds.tuple();

  auto phase = [](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const PhaseError&) {
      throw;
    } catch (const std::exception& e) {
      throw PhaseError(name, e.what());
    }
  };

  if (cfg.attack.kind == AttackKind::label_flip)
    throw PhaseError("config", "label_flip is a generator only, not an unlearning benchmark");
  const Scenario sc = phase("poison", [&] { return make_scenario(lab, cfg); });
  r.forget_count = sc.forget.size();
  const ModelSpec spec = phase("config", [&] { return resolve_model_spec(cfg, sc.train); });
  const TrainConfig tc = resolve_train_config(cfg);
  const auto all = all_indices(sc.train.size());
  const auto oracle_idx = complement(sc.train.size(), sc.manipulated);

  const Model original = phase("train", [&] { return lab.trained_model(spec, tc, sc.train, all); });
  const Model oracle = phase("oracle", [&] { return lab.trained_model(spec, tc, sc.train, oracle_idx); });

  Model edited = original;
  const auto t_method = clock::now();
  phase("unlearn", [&] {
    switch (cfg.method) {
      case Method::none: break;
      case Method::eu: {
        const auto keep = complement(sc.train.size(), sc.forget);
        edited = lab.trained_model(spec, tc, sc.train, keep);
        break;
      }
      case Method::ptn_ssd:
      case Method::ptn_lf:
      case Method::ptn_xlf: {
        PTNConfig pc = cfg.ptn;
        apply_method_estimator(cfg.method, pc);
        const auto t_imp = clock::now();
        auto retain = lab.importance(original, sc.train, all, pc.estimator, pc.w);
        auto forget = lab.importance(original, sc.train, sc.forget, pc.estimator, pc.w);
        r.t_importance_s = detail::seconds_since(t_imp);
        const auto t_search = clock::now();
        auto res = ptn_search(original, retain, forget, sc.train, sc.forget, sc.train.size(), pc);
        r.t_search_s = detail::seconds_since(t_search);
        edited = std::move(res.model);
        r.alpha = res.trace.chosen().alpha;
        r.lambda = pc.lambda;
        r.modified_count = res.trace.chosen().modified;
        r.iterations = res.trace.iterations();
        r.status = to_string(res.trace.status);
        r.trace = std::move(res.trace);
        break;
      }
      case Method::ssd_grid: {
        const auto t_imp = clock::now();
        auto retain = lab.importance(original, sc.train, all, Estimator::fim, 1.0);
        auto forget = lab.importance(original, sc.train, sc.forget, Estimator::fim, 1.0);
        r.t_importance_s = detail::seconds_since(t_imp);
        const auto t_search = clock::now();
        const auto val = validation_indices(sc.train.size(), cfg.grid.validation_fraction, cfg.seeds.search);
        auto g = ssd_grid_search(original, retain, forget, sc.train, sc.forget, val, cfg.grid);
        r.t_search_s = detail::seconds_since(t_search);
        const auto& e = g.entries[g.selected];
        edited = std::move(g.model);
        r.alpha = e.alpha;
        r.lambda = e.lambda;
        r.modified_count = e.modified;
        r.iterations = g.entries.size();
        json entries = json::array();
        for (const auto& x : g.entries)
          entries.push_back({{"alpha", is_noop_alpha(x.alpha) ? json("inf") : json(x.alpha)},
                             {"lambda", x.lambda},
                             {"acc_forget", x.acc_forget},
                             {"acc_validation", x.acc_validation},
                             {"score", x.score},
                             {"modified", x.modified}});
        r.grid = {{"selected", g.selected},
                  {"acc_forget_original", g.acc_forget_original},
                  {"acc_validation_original", g.acc_validation_original},
                  {"entries", entries}};
        break;
      }
    }
    return 0;
  });
  if (cfg.method == Method::none || cfg.method == Method::eu) r.t_search_s = detail::seconds_since(t_method);

  phase("evaluate", [&] {
    r.acc_forget_before = evaluate_accuracy(original, sc.train, sc.forget, LabelMode::assigned);
    r.acc_forget_after = evaluate_accuracy(edited, sc.train, sc.forget, LabelMode::assigned);
    r.acc_clean_original = evaluate_accuracy(original, sc.test_clean, LabelMode::clean);
    r.acc_clean_model = evaluate_accuracy(edited, sc.test_clean, LabelMode::clean);
    r.acc_poisoned_model = evaluate_accuracy(edited, sc.test_poisoned, LabelMode::clean);
    r.acc_poisoned_oracle = evaluate_accuracy(oracle, sc.test_poisoned, LabelMode::clean);
    r.healed_pct = poison_healed(edited, oracle, sc.test_poisoned);
    r.damage_pts = model_damage(edited, original, sc.test_clean);
    return 0;
  });
  r.t_total_s = detail::seconds_since(t_start);
  return r;
}

// Runs independent scenarios on up to `jobs` threads; result order follows `configs`.
// A failing scenario yields a row with status "error" and the sweep continues.
inline std::vector<ScenarioResult> run_all(Lab& lab, const std::vector<ScenarioConfig>& configs,
                                           std::size_t jobs = 1) {
  std::vector<ScenarioResult> out(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < configs.size();) {
      try {
        out[i] = run_scenario(lab, configs[i]);
      } catch (const std::exception& e) {
        ScenarioResult r;
        r.id = configs[i].id;
        r.method = configs[i].method;
        r.attack = configs[i].attack.kind;
        r.poison_count = configs[i].poison_count;
        r.discovery = configs[i].discovery.label();
        r.seeds = configs[i].seeds.tuple();
        r.status = "error";
        r.error = e.what();
        out[i] = std::move(r);
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, configs.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Results files.

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{"scenario_id",   "method",         "attack",      "sm_size",
                                             "discovery",     "healed_pct",     "damage_pts",  "alpha",
                                             "lambda",        "modified_count", "iterations",  "t_importance_s",
                                             "t_search_s",    "t_total_s",      "seeds"};
  return cols;
}

inline std::string csv_number(std::optional<double> v) {
  if (!v) return "";
  if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
  return format_number(*v);
}

inline std::vector<std::string> csv_fields(const ScenarioResult& r) {
  const bool ok = !r.failed();
  auto num = [&](double v) { return ok ? csv_number(v) : std::string(); };
  return {r.id,
          to_string(r.method),
          to_string(r.attack),
          std::to_string(r.poison_count),
          r.discovery,
          num(r.healed_pct),
          num(r.damage_pts),
          ok ? csv_number(r.alpha) : "",
          ok ? csv_number(r.lambda) : "",
          ok ? std::to_string(r.modified_count) : "",
          ok ? std::to_string(r.iterations) : "",
          num(r.t_importance_s),
          num(r.t_search_s),
          num(r.t_total_s),
          r.seeds};
}

inline std::string join_csv(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    const bool quote = fields[i].find_first_of(",\"\n") != std::string::npos;
    if (!quote) {
      line += fields[i];
      continue;
    }
    line += '"';
    for (char c : fields[i]) {
      if (c == '"') line += '"';
      line += c;
    }
    line += '"';
  }
  return line;
}

inline std::string csv_row(const ScenarioResult& r) { return join_csv(csv_fields(r)); }

inline void write_results_csv(const std::filesystem::path& path, const std::vector<ScenarioResult>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << join_csv(csv_columns()) << "\n";
  for (const auto& r : rows) out << csv_row(r) << "\n";
}

inline json to_json(const ScenarioResult& r) {
  json j = {{"scenario_id", r.id},
            {"method", to_string(r.method)},
            {"attack", to_string(r.attack)},
            {"poison_count", r.poison_count},
            {"discovery", r.discovery},
            {"forget_count", r.forget_count},
            {"status", r.status},
            {"seeds", r.seeds}};
  if (r.failed()) {
    j["error"] = r.error;
    return j;
  }
  j["healed_pct"] = r.healed_pct;
  j["damage_pts"] = r.damage_pts;
  j["acc_forget_before"] = r.acc_forget_before;
  j["acc_forget_after"] = r.acc_forget_after;
  j["acc_clean_model"] = r.acc_clean_model;
  j["acc_clean_original"] = r.acc_clean_original;
  j["acc_poisoned_model"] = r.acc_poisoned_model;
  j["acc_poisoned_oracle"] = r.acc_poisoned_oracle;
  j["alpha"] = r.alpha ? json(csv_number(r.alpha)) : json(nullptr);
  j["lambda"] = r.lambda ? json(*r.lambda) : json(nullptr);
  j["modified_count"] = r.modified_count;
  j["iterations"] = r.iterations;
  j["timing"] = {{"importance_s", r.t_importance_s}, {"search_s", r.t_search_s}, {"total_s", r.t_total_s}};
  if (r.trace) j["trace"] = to_json(*r.trace);
  if (!r.grid.is_null()) j["grid"] = r.grid;
  return j;
}

}  // namespace potionlab
