// potionlab command-line driver.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime error, 4 search exhausted.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "potionlab/potionlab.hpp"

namespace fs = std::filesystem;
using namespace potionlab;

namespace {

constexpr int kExitOk = 0, kExitConfig = 2, kExitRuntime = 3, kExitExhausted = 4;

struct Globals {
  std::string config;
  std::size_t jobs = 1;
  std::string out;
  std::vector<std::string> seed_overrides;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string file_checksum(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Checksum c;
  c.update(buf.data(), buf.size());
  return c.hex();
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out", "an output directory is required");
  fs::create_directories(g.out);
  return g.out;
}

RunConfig load_config(const Globals& g, bool required) {
  RunConfig c;
  if (g.config.empty()) {
    if (required) throw ConfigError("--config", "a config file is required");
  } else {
    c = load_run_config(g.config);
  }
  for (const auto& kv : g.seed_overrides) apply_seed_override(c, kv);
  return c;
}

std::optional<fs::path> cache_from_env() {
  if (const char* p = std::getenv("POTIONLAB_CACHE"); p && *p) {
    fs::create_directories(p);
    return fs::path(p);
  }
  return std::nullopt;
}

void write_manifest(const fs::path& out, const RunConfig& cfg, const std::vector<fs::path>& artifacts,
                    const std::string& started) {
  json arts = json::array();
  for (const auto& a : artifacts)
    arts.push_back({{"path", fs::relative(a, out).string()}, {"checksum", file_checksum(a)}});
  Checksum ch;
  ch.update(to_json(cfg).dump());
  json m = {{"tool", "potionlab"},
            {"tool_version", kVersion},
            {"config_hash", ch.hex()},
            {"started", started},
            {"finished", utc_now()},
            {"artifacts", arts}};
  std::ofstream(out / "manifest.json") << m.dump(2) << "\n";
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string synthetic;
  std::string import_dir;
  BlobConfig blobs;
};

int cmd_gen_data(const Globals& g, const GenDataArgs& a) {
  const fs::path out = require_out(g);
  if (!a.import_dir.empty()) {
    if (!a.synthetic.empty()) throw ConfigError("--import", "--import and --synthetic are exclusive");
    Dataset train, test;
    try {
      train = load_split(a.import_dir, "train");
      test = load_split(a.import_dir, "test");
    } catch (const std::exception& e) {
      throw ConfigError("--import", std::string("malformed import manifest: ") + e.what());
    }
    save_datasets(out, {{"train", &train}, {"test", &test}}, {{"source", "import"}});
    std::cout << "imported " << train.size() + test.size() << " samples into " << out << "\n";
    return kExitOk;
  }
  if (a.synthetic != "blobs") throw ConfigError("--synthetic", "only 'blobs' is available");
  try {
    a.blobs.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("gen-data", e.what());
  }
  auto data = generate_blobs(a.blobs);
  save_datasets(out, {{"train", &data.train}, {"test", &data.test}},
                {{"source", "blobs"}, {"generator", to_json(a.blobs)}});
  Checksum c;
  c.update(data.train.id());
  c.update(data.test.id());
  std::cout << "wrote " << data.train.size() + data.test.size() << " samples (checksum " << c.hex() << ") to "
            << out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string split = "train";
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  const fs::path out = require_out(g);
  RunConfig cfg = load_config(g, false);
  Dataset train = load_split(a.data, a.split);
  ScenarioConfig sc = cfg.base;
  const ModelSpec spec = resolve_model_spec(sc, train);
  const TrainConfig tc = resolve_train_config(sc);
  auto idx = all_indices(train.size());
  auto res = potionlab::train(build_model(spec), train, idx, tc);
  save_model(res.model, out / "model");
  json hist = json::array();
  for (const auto& e : res.history) hist.push_back({{"loss", e.loss}, {"accuracy", e.accuracy}});
  std::ofstream(out / "history.json") << hist.dump(2) << "\n";
  std::cout << "trained " << res.model.param_count() << " parameters; final train accuracy "
            << fixed(100 * res.history.back().accuracy) << "%\n";
  return kExitOk;
}

int cmd_poison(const Globals& g, const std::string& data_dir) {
  const fs::path out = require_out(g);
  RunConfig cfg = load_config(g, true);
  Dataset train = load_split(data_dir, "train");
  Dataset test = load_split(data_dir, "test");
  const auto& b = cfg.base;
  Scenario sc = build_scenario(train, test, b.attack, b.poison_count, b.discovery, {b.seeds.poison, b.seeds.discovery},
                               b.exclude_target);
  save_datasets(out, {{"train", &sc.train}, {"test_clean", &sc.test_clean}, {"test_poisoned", &sc.test_poisoned}},
                {{"scenario", sc.metadata}});
  std::cout << "poisoned " << sc.manipulated.size() << " samples, discovered " << sc.forget.size() << "\n";
  return kExitOk;
}

struct UnlearnArgs {
  std::string model;
  std::string data;
  std::string method = "ptn_xlf";
};

int cmd_unlearn(const Globals& g, const UnlearnArgs& a) {
  const fs::path out = require_out(g);
  RunConfig cfg = load_config(g, false);
  Method method;
  try {
    method = method_from_string(a.method);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("--method", e.what());
  }
  if (!is_ptn(method) && method != Method::ssd_grid)
    throw ConfigError("--method", "unlearn supports ptn_ssd, ptn_lf, ptn_xlf and ssd_grid");
  const Model model = load_model(a.model);
  const Dataset train = load_split(a.data, "train");
  const auto forget = indices_where(train.forget);
  if (forget.empty()) throw std::runtime_error("dataset has no discovered (forget) samples");
  const auto all = all_indices(train.size());
  Lab lab(cache_from_env());
  json report;
  int code = kExitOk;
  Model edited;
  if (is_ptn(method)) {
    PTNConfig pc = cfg.base.ptn;
    apply_method_estimator(method, pc);
    auto retain = lab.importance(model, train, all, pc.estimator, pc.w);
    auto res = ptn_search(model, retain, train, forget, train.size(), pc);
    report = to_json(res.trace);
    edited = std::move(res.model);
    if (res.trace.status == SearchStatus::exhausted) code = kExitExhausted;
    std::cout << a.method << ": " << to_string(res.trace.status) << " after " << res.trace.iterations()
              << " iterations, " << res.trace.chosen().modified << " parameters modified\n";
  } else {
    auto retain = lab.importance(model, train, all, Estimator::fim, 1.0);
    auto fimp = lab.importance(model, train, forget, Estimator::fim, 1.0);
    auto val = validation_indices(train.size(), cfg.base.grid.validation_fraction, cfg.base.seeds.search);
    auto gr = ssd_grid_search(model, retain, fimp, train, forget, val, cfg.base.grid);
    const auto& e = gr.entries[gr.selected];
    report = {{"alpha", e.alpha}, {"lambda", e.lambda}, {"modified", e.modified}, {"score", e.score}};
    edited = std::move(gr.model);
    std::cout << "ssd_grid: alpha " << e.alpha << ", lambda " << e.lambda << ", " << e.modified
              << " parameters modified\n";
  }
  save_model(edited, out / "model");
  std::ofstream(out / "trace.json") << report.dump(2) << "\n";
  return code;
}

int cmd_run(const Globals& g) {
  const std::string started = utc_now();
  const fs::path out = require_out(g);
  RunConfig cfg = load_config(g, true);
  auto scenarios = expand(cfg);
  Lab lab(cache_from_env());
  auto results = run_all(lab, scenarios, g.jobs);

  const fs::path csv = out / "results.csv", traces = out / "traces.json", echo = out / "config.echo.json";
  write_results_csv(csv, results);
  json side = json::array();
  for (const auto& r : results) side.push_back(to_json(r));
  std::ofstream(traces) << side.dump(1) << "\n";
  std::ofstream(echo) << to_json(cfg).dump(2) << "\n";
  write_manifest(out, cfg, {csv, traces, echo}, started);

  bool failed = false, exhausted = false;
  for (const auto& r : results) {
    if (r.failed()) {
      failed = true;
      std::cerr << r.id << ": " << r.error << "\n";
    }
    if (r.status == "exhausted") exhausted = true;
  }
  std::cout << results.size() << " scenario(s) written to " << csv << "\n";
  if (failed) return kExitRuntime;
  return exhausted ? kExitExhausted : kExitOk;
}

struct ReportArgs {
  std::string results;
  std::string kind = "summary";
};

int cmd_report(const Globals& g, const ReportArgs& a) {
  CsvTable t = read_csv(a.results);
  if (a.kind == "summary") {
    auto rows = summarize(t);
    std::cout << format_summary(rows);
    if (!g.out.empty()) write_summary_csv((require_out(g) / "summary.csv").string(), rows);
  } else if (a.kind == "curves") {
    const fs::path out = require_out(g);
    write_curves_csv((out / "curves.csv").string(), curves(t));
    std::cout << "wrote " << (out / "curves.csv") << "\n";
  } else if (a.kind == "times") {
    auto rows = timings(t);
    if (!g.out.empty()) write_times_csv((require_out(g) / "times.csv").string(), rows);
    for (const auto& r : rows)
      std::cout << r.method << ": importance " << fixed(r.importance.mean, 3) << " s, search "
                << fixed(r.search.mean, 3) << " s, total " << fixed(r.total.mean, 3) << " s\n";
  } else {
    throw ConfigError("--kind", "expected summary, curves or times");
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"potionlab: poison unlearning laboratory"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON config file");
  app.add_option("--jobs", g.jobs, "concurrent scenarios")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "output directory");
  app.add_option("--seed-override", g.seed_overrides, "override a seed, K=V (train, poison, discovery, search, data)");
  app.set_version_flag("--version", kVersion);

  GenDataArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "generate or import a dataset");
  c_gen->add_option("--synthetic", gen.synthetic, "synthetic generator (blobs)");
  c_gen->add_option("--import", gen.import_dir, "existing dataset directory to validate and copy");
  c_gen->add_option("--classes", gen.blobs.classes)->check(CLI::Range(2, 1000));
  c_gen->add_option("--train", gen.blobs.train)->check(CLI::PositiveNumber);
  c_gen->add_option("--test", gen.blobs.test)->check(CLI::PositiveNumber);
  c_gen->add_option("--size", gen.blobs.size)->check(CLI::Range(4, 512));
  c_gen->add_option("--channels", gen.blobs.channels)->check(CLI::Range(1, 16));
  c_gen->add_option("--seed", gen.blobs.seed);
  c_gen->add_option("--noise", gen.blobs.noise);
  c_gen->add_option("--jitter", gen.blobs.jitter);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train a model on a dataset split");
  c_train->add_option("--data", tr.data, "dataset directory")->required();
  c_train->add_option("--split", tr.split, "split name");

  std::string poison_data;
  auto* c_poison = app.add_subcommand("poison", "build a poisoned scenario from a clean dataset");
  c_poison->add_option("--data", poison_data, "clean dataset directory")->required();

  UnlearnArgs un;
  auto* c_unlearn = app.add_subcommand("unlearn", "unlearn the discovered samples of a poisoned dataset");
  c_unlearn->add_option("--model", un.model, "model path prefix")->required();
  c_unlearn->add_option("--data", un.data, "poisoned dataset directory")->required();
  c_unlearn->add_option("--method", un.method, "ptn_xlf, ptn_lf, ptn_ssd or ssd_grid");

  auto* c_run = app.add_subcommand("run", "run the scenarios of a config");

  ReportArgs rep;
  auto* c_report = app.add_subcommand("report", "summarize a results file");
  c_report->add_option("--results", rep.results, "results CSV")->required();
  c_report->add_option("--kind", rep.kind, "summary, curves or times");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (c_gen->parsed()) return cmd_gen_data(g, gen);
    if (c_train->parsed()) return cmd_train(g, tr);
    if (c_poison->parsed()) return cmd_poison(g, poison_data);
    if (c_unlearn->parsed()) return cmd_unlearn(g, un);
    if (c_run->parsed()) return cmd_run(g);
    if (c_report->parsed()) return cmd_report(g, rep);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const PhaseError& e) {
    std::cerr << "error [" << e.phase() << "]: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
