#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "harness.hpp"
#include "json_util.hpp"

namespace potionlab {

inline constexpr int kConfigVersion = 1;

struct SweepAxes {
  std::vector<AttackKind> attack;
  std::vector<std::size_t> poison_count;
  std::vector<Discovery> discovery;
  std::vector<std::uint64_t> seed;  // sets all four scenario seeds
  std::vector<Method> method;
  std::vector<double> rho;
  std::vector<double> s_step;
  bool empty() const {
    return attack.empty() && poison_count.empty() && discovery.empty() && seed.empty() && method.empty() &&
           rho.empty() && s_step.empty();
  }
  bool operator==(const SweepAxes&) const = default;
};

struct RunConfig {
  int version = kConfigVersion;
  std::string name = "run";
  ScenarioConfig base;
  SweepAxes sweep;
  bool operator==(const RunConfig&) const = default;
};

// ---------------------------------------------------------------------------
// JSON -> config

namespace detail {

inline double number_or_inf(const json& v, const std::string& path) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string() && v.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
  throw ConfigError(path, "expected a number or \"inf\"");
}

inline json inf_or_number(double x) { return std::isinf(x) ? json("inf") : json(x); }

template <class T, class F>
std::vector<T> read_list(const json& v, const std::string& path, F&& each) {
  if (!v.is_array()) throw ConfigError(path, "expected an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(each(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

template <class T>
T typed(const json& v, const std::string& path) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path, "wrong type");
  }
}

template <class Fn>
auto checked(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
}

}  // namespace detail

inline Discovery discovery_from_json(const json& v, const std::string& path) {
  if (v.is_object()) {
    ObjectReader r(v, path);
    auto n = r.get<std::size_t>("count");
    r.finish();
    if (n == 0) throw ConfigError(path + ".count", "must be >= 1");
    return Discovery::count(n);
  }
  if (v.is_number()) {
    const double f = v.get<double>();
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError(path, "fraction must be in (0,1]; use {\"count\": n} for counts");
    return Discovery::fraction(f);
  }
  throw ConfigError(path, "expected a fraction or {\"count\": n}");
}

inline json to_json(const Discovery& d) {
  if (d.is_count()) return {{"count", std::get<std::size_t>(d.value)}};
  return std::get<double>(d.value);
}

inline BlobConfig blobs_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  BlobConfig b;
  b.classes = r.get_or<std::size_t>("classes", b.classes);
  b.train = r.get_or<std::size_t>("train", b.train);
  b.test = r.get_or<std::size_t>("test", b.test);
  b.size = r.get_or<std::size_t>("size", b.size);
  b.channels = r.get_or<std::size_t>("channels", b.channels);
  b.seed = r.get_or<std::uint64_t>("seed", b.seed);
  b.noise = r.get_or<double>("noise", b.noise);
  b.jitter = r.get_or<double>("jitter", b.jitter);
  b.sigma = r.get_or<double>("sigma", b.sigma);
  r.finish();
  detail::checked(path, [&] {
    b.validate();
    return 0;
  });
  return b;
}

inline json to_json(const BlobConfig& b) {
  return {{"classes", b.classes}, {"train", b.train},   {"test", b.test},     {"size", b.size},
          {"channels", b.channels}, {"seed", b.seed}, {"noise", b.noise}, {"jitter", b.jitter},
          {"sigma", b.sigma}};
}

inline DataConfig data_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  DataConfig d;
  const bool has_blobs = r.has("blobs"), has_path = r.has("path");
  if (has_blobs == has_path) throw ConfigError(path, "exactly one of 'blobs' or 'path' is required");
  if (has_blobs) {
    d.blobs = blobs_from_json(r.at("blobs"), r.sub("blobs"));
  } else {
    d.blobs.reset();
    d.path = r.get<std::string>("path");
  }
  r.finish();
  return d;
}

inline json to_json(const DataConfig& d) {
  if (d.blobs) return {{"blobs", to_json(*d.blobs)}};
  return {{"path", d.path}};
}

inline TrainConfig train_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  TrainConfig t;
  t.epochs = r.get_or<std::size_t>("epochs", t.epochs);
  t.batch_size = r.get_or<std::size_t>("batch_size", t.batch_size);
  t.learning_rate = r.get_or<double>("learning_rate", t.learning_rate);
  const std::string opt = r.get_or<std::string>("optimizer", "sgd-momentum");
  if (opt == "sgd")
    t.optimizer = Optimizer::sgd;
  else if (opt == "sgd-momentum")
    t.optimizer = Optimizer::sgd_momentum;
  else
    throw ConfigError(r.sub("optimizer"), "expected 'sgd' or 'sgd-momentum'");
  t.momentum = r.get_or<double>("momentum", t.momentum);
  r.finish();
  detail::checked(path, [&] {
    t.validate();
    return 0;
  });
  return t;
}

inline json to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"optimizer", t.optimizer == Optimizer::sgd ? "sgd" : "sgd-momentum"},
          {"momentum", t.momentum}};
}

inline AttackSpec attack_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  AttackSpec a;
  a.kind = detail::checked(r.sub("kind"), [&] { return attack_from_string(r.get<std::string>("kind")); });
  a.target = r.get_or<int>("target", a.target);
  a.patch_area = r.get_or<double>("patch_area", a.patch_area);
  a.frequency = r.get_or<double>("frequency", a.frequency);
  a.amplitude = r.get_or<double>("amplitude", a.amplitude);
  a.seed = r.get_or<std::uint64_t>("seed", a.seed);
  if (r.has("flip_pair")) {
    auto pair = detail::typed<std::vector<int>>(r.at("flip_pair"), r.sub("flip_pair"));
    if (pair.size() != 2) throw ConfigError(r.sub("flip_pair"), "expected two classes");
    a.flip_a = pair[0];
    a.flip_b = pair[1];
  }
  a.flip_fraction = r.get_or<double>("flip_fraction", a.flip_fraction);
  r.finish();
  return a;
}

inline json to_json(const AttackSpec& a) {
  json j = {{"kind", to_string(a.kind)},         {"target", a.target},       {"patch_area", a.patch_area},
            {"frequency", a.frequency},          {"amplitude", a.amplitude}, {"seed", a.seed},
            {"flip_pair", {a.flip_a, a.flip_b}}, {"flip_fraction", a.flip_fraction}};
  return j;
}

inline PTNConfig ptn_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  PTNConfig p;
  p.rho = r.get_or<double>("rho", p.rho);
  p.b_start = r.get_or<double>("b_start", p.b_start);
  p.s_step = r.get_or<double>("s_step", p.s_step);
  if (r.has("s_max")) p.s_max = r.get<double>("s_max");
  p.lambda = r.get_or<double>("lambda", p.lambda);
  p.parallel = r.get_or<std::size_t>("parallel", p.parallel);
  r.finish();
  detail::checked(path, [&] {
    p.validate();
    return 0;
  });
  return p;
}

inline json to_json(const PTNConfig& p) {
  return {{"rho", p.rho},
          {"b_start", p.b_start},
          {"s_step", p.s_step},
          {"s_max", p.s_max ? json(*p.s_max) : json(nullptr)},
          {"lambda", p.lambda},
          {"parallel", p.parallel}};
}

inline GridConfig grid_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  GridConfig g;
  if (r.has("alphas"))
    g.alphas = detail::read_list<double>(r.at("alphas"), r.sub("alphas"), detail::number_or_inf);
  if (r.has("lambda_multipliers"))
    g.lambda_multipliers = detail::read_list<double>(r.at("lambda_multipliers"), r.sub("lambda_multipliers"),
                                                     [](const json& v, const std::string& p) {
                                                       return detail::typed<double>(v, p);
                                                     });
  g.validation_fraction = r.get_or<double>("validation_fraction", g.validation_fraction);
  r.finish();
  if (g.alphas.empty() || g.lambda_multipliers.empty()) throw ConfigError(path, "grid axes must be nonempty");
  for (double a : g.alphas)
    if (!(a > 0.0)) throw ConfigError(r.sub("alphas"), "alphas must be positive");
  for (double l : g.lambda_multipliers)
    if (!(l > 0.0)) throw ConfigError(r.sub("lambda_multipliers"), "multipliers must be positive");
  if (!(g.validation_fraction > 0.0 && g.validation_fraction <= 1.0))
    throw ConfigError(r.sub("validation_fraction"), "must be in (0,1]");
  return g;
}

inline json to_json(const GridConfig& g) {
  json alphas = json::array();
  for (double a : g.alphas) alphas.push_back(detail::inf_or_number(a));
  return {{"alphas", alphas}, {"lambda_multipliers", g.lambda_multipliers},
          {"validation_fraction", g.validation_fraction}};
}

inline SeedSet seeds_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  SeedSet s;
  s.train = r.get<std::uint64_t>("train");
  s.poison = r.get<std::uint64_t>("poison");
  s.discovery = r.get<std::uint64_t>("discovery");
  s.search = r.get<std::uint64_t>("search");
  r.finish();
  return s;
}

inline json to_json(const SeedSet& s) {
  return {{"train", s.train}, {"poison", s.poison}, {"discovery", s.discovery}, {"search", s.search}};
}

inline SweepAxes sweep_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  SweepAxes a;
  auto list = [&](const char* key, auto&& each) {
    using T = decltype(each(json(), std::string()));
    if (!r.has(key)) return std::vector<T>{};
    auto v = detail::read_list<T>(r.at(key), r.sub(key), each);
    if (v.empty()) throw ConfigError(r.sub(key), "sweep axis must be nonempty");
    return v;
  };
  a.attack = list("attack", [](const json& v, const std::string& p) {
    return detail::checked(p, [&] { return attack_from_string(detail::typed<std::string>(v, p)); });
  });
  a.poison_count = list("poison_count", [](const json& v, const std::string& p) {
    return detail::typed<std::size_t>(v, p);
  });
  a.discovery = list("discovery", discovery_from_json);
  a.seed = list("seed", [](const json& v, const std::string& p) { return detail::typed<std::uint64_t>(v, p); });
  a.method = list("method", [](const json& v, const std::string& p) {
    return detail::checked(p, [&] { return method_from_string(detail::typed<std::string>(v, p)); });
  });
  a.rho = list("rho", [](const json& v, const std::string& p) { return detail::typed<double>(v, p); });
  a.s_step = list("s_step", [](const json& v, const std::string& p) { return detail::typed<double>(v, p); });
  r.finish();
  for (double x : a.rho)
    if (!(x > 0.0 && x <= 1.0)) throw ConfigError(r.sub("rho"), "rho must be in (0,1]");
  for (double x : a.s_step)
    if (!(x > 1.0)) throw ConfigError(r.sub("s_step"), "s_step must exceed 1");
  return a;
}

inline json to_json(const SweepAxes& a) {
  json j = json::object();
  auto put = [&](const char* key, const auto& v, auto&& conv) {
    if (v.empty()) return;
    json arr = json::array();
    for (const auto& x : v) arr.push_back(conv(x));
    j[key] = arr;
  };
  auto same = [](const auto& x) { return json(x); };
  put("attack", a.attack, [](AttackKind k) { return json(to_string(k)); });
  put("poison_count", a.poison_count, same);
  put("discovery", a.discovery, [](const Discovery& d) { return to_json(d); });
  put("seed", a.seed, same);
  put("method", a.method, [](Method m) { return json(to_string(m)); });
  put("rho", a.rho, same);
  put("s_step", a.s_step, same);
  return j;
}

inline RunConfig run_config_from_json(const json& j) {
  ObjectReader r(j, "");
  RunConfig c;
  c.version = r.get<int>("version");
  if (c.version != kConfigVersion)
    throw ConfigError("version", "unsupported config version " + std::to_string(c.version));
  c.name = r.get_or<std::string>("name", c.name);
  ScenarioConfig& s = c.base;
  s.data = data_from_json(r.at("data"), "data");
  if (r.has("model")) s.model = detail::checked("model", [&] { return model_spec_from_json(r.at("model"), "model"); });
  if (r.has("train")) s.train = train_from_json(r.at("train"), "train");
  s.attack = attack_from_json(r.at("attack"), "attack");
  s.poison_count = r.get<std::size_t>("poison_count");
  if (s.poison_count == 0) throw ConfigError("poison_count", "must be >= 1");
  s.discovery = discovery_from_json(r.at("discovery"), "discovery");
  s.method = detail::checked("method", [&] { return method_from_string(r.get<std::string>("method")); });
  if (r.has("ptn")) s.ptn = ptn_from_json(r.at("ptn"), "ptn");
  if (r.has("grid")) s.grid = grid_from_json(r.at("grid"), "grid");
  s.seeds = seeds_from_json(r.at("seeds"), "seeds");
  s.exclude_target = r.get_or<bool>("exclude_target_class", true);
  if (r.has("sweep")) c.sweep = sweep_from_json(r.at("sweep"), "sweep");
  r.finish();
  s.id = c.name;
  return c;
}

inline json to_json(const RunConfig& c) {
  const ScenarioConfig& s = c.base;
  json j = {{"version", c.version},
            {"name", c.name},
            {"data", to_json(s.data)},
            {"train", to_json(s.train)},
            {"attack", to_json(s.attack)},
            {"poison_count", s.poison_count},
            {"discovery", to_json(s.discovery)},
            {"method", to_string(s.method)},
            {"ptn", to_json(s.ptn)},
            {"grid", to_json(s.grid)},
            {"seeds", to_json(s.seeds)},
            {"exclude_target_class", s.exclude_target}};
  if (s.model) j["model"] = to_json(*s.model);
  if (!c.sweep.empty()) j["sweep"] = to_json(c.sweep);
  return j;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("", std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

// Applies K=V to the base seeds; K is train, poison, discovery, search or data.
inline void apply_seed_override(RunConfig& c, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("--seed-override", "expected K=V, got '" + kv + "'");
  const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
  std::uint64_t v = 0;
  auto res = std::from_chars(val.data(), val.data() + val.size(), v);
  if (res.ec != std::errc() || res.ptr != val.data() + val.size())
    throw ConfigError("--seed-override", "seed value must be a nonnegative integer: '" + val + "'");
  SeedSet& s = c.base.seeds;
  if (key == "train")
    s.train = v;
  else if (key == "poison")
    s.poison = v;
  else if (key == "discovery")
    s.discovery = v;
  else if (key == "search")
    s.search = v;
  else if (key == "data") {
    if (!c.base.data.blobs) throw ConfigError("--seed-override", "data seed applies to synthetic data only");
    c.base.data.blobs->seed = v;
  } else
    throw ConfigError("--seed-override", "unknown seed '" + key + "'");
}

// Cross product in the order attack, poison_count, discovery, seed, method, rho, s_step
// (outermost first). Ids are <name>-<index>.
inline std::vector<ScenarioConfig> expand(const RunConfig& c) {
  std::vector<ScenarioConfig> out{c.base};
  auto axis = [&](const auto& values, auto&& set) {
    if (values.empty()) return;
    std::vector<ScenarioConfig> next;
    for (const auto& cfg : out)
      for (const auto& v : values) {
        ScenarioConfig x = cfg;
        set(x, v);
        next.push_back(std::move(x));
      }
    out = std::move(next);
  };
  axis(c.sweep.attack, [](ScenarioConfig& x, AttackKind k) { x.attack.kind = k; });
  axis(c.sweep.poison_count, [](ScenarioConfig& x, std::size_t m) { x.poison_count = m; });
  axis(c.sweep.discovery, [](ScenarioConfig& x, const Discovery& d) { x.discovery = d; });
  axis(c.sweep.seed, [](ScenarioConfig& x, std::uint64_t s) { x.seeds = SeedSet::all(s); });
  axis(c.sweep.method, [](ScenarioConfig& x, Method m) { x.method = m; });
  axis(c.sweep.rho, [](ScenarioConfig& x, double r) { x.ptn.rho = r; });
  axis(c.sweep.s_step, [](ScenarioConfig& x, double s) { x.ptn.s_step = s; });
  if (out.size() == 1 && c.sweep.empty()) {
    out[0].id = c.name;
    return out;
  }
  const std::size_t width = std::to_string(out.size() - 1).size();
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::string idx = std::to_string(i);
    out[i].id = c.name + "-" + std::string(width - idx.size(), '0') + idx;
  }
  return out;
}

}  // namespace potionlab
