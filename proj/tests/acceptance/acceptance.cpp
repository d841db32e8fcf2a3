// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "properties.hpp"
#include "support.hpp"

using namespace potionlab;
using namespace potionlab::testing;

namespace {

using clock_type = std::chrono::steady_clock;

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [fail] " << what << ";";
    }
  }
  void note(const std::string& what) { detail << " " << what << ";"; }
};

double seconds_since(clock_type::time_point t) {
  return std::chrono::duration<double>(clock_type::now() - t).count();
}

std::string f2(double v) { return fixed(v, 2); }

int g_failures = 0;

void report(int id, Verdict& v, double seconds, double budget) {
  v.require(seconds < budget, "runtime " + f2(seconds) + " s exceeds " + f2(budget) + " s");
  if (!v.pass) ++g_failures;
  std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << " (" << f2(seconds) << " s)"
            << v.detail.str() << std::endl;
}

// ---------------------------------------------------------------------------

void criterion_gradients() {
  const auto t0 = clock_type::now();
  Verdict v;
  double worst_loss = 0.0, worst_norm = 0.0;
  const int models = 24;
  for (int seed = 0; seed < models; ++seed) {
    Model m = random_model(static_cast<std::uint64_t>(seed));
    Batch b = random_batch(m, 3, static_cast<std::uint64_t>(seed) + 1000);
    const double e = relative_error(loss_gradient(m, b),
                                    finite_difference(m, [&](const Model& x) { return mean_loss(x, b); }, 1e-5));
    worst_loss = std::max(worst_loss, e);
    v.require(e < 1e-4, "loss gradient seed " + std::to_string(seed) + " rel err " + format_number(e));
    Batch one = random_batch(m, 1, static_cast<std::uint64_t>(seed) + 2000);
    for (double w : {0.5, 1.0, 2.0, 3.0}) {
      const auto g = outnorm_gradient(m, one, w);
      const double en = relative_error(
          g.gradient, finite_difference(m, [&](const Model& x) { return output_norm_pow(x, one.image(0), w); }, 1e-5));
      worst_norm = std::max(worst_norm, en);
      v.require(en < 1e-4, "output-norm gradient seed " + std::to_string(seed) + " w " + format_number(w) +
                               " rel err " + format_number(en));
    }
  }
  v.note(std::to_string(models) + " models, worst rel err loss " + format_number(worst_loss) + ", output norm " +
         format_number(worst_norm));
  report(1, v, seconds_since(t0), 30.0);
}

void criterion_dampening() {
  const auto t0 = clock_type::now();
  Verdict v;
  const int cases = 1000;
  int failed = 0;
  for (int seed = 0; seed < cases; ++seed) {
    const std::string why = check_dampening_case(static_cast<std::uint64_t>(seed));
    if (!why.empty()) {
      if (failed++ < 3) v.require(false, "case " + std::to_string(seed) + ": " + why);
    }
  }
  v.require(failed == 0, std::to_string(failed) + " failing cases");
  v.note(std::to_string(cases) + " randomized cases");
  report(2, v, seconds_since(t0), 10.0);
}

void criterion_percentile() {
  const auto t0 = clock_type::now();
  Verdict v;
  v.require(std::abs(percentile_from_siter(1e-300) - 100.0) < 1e-12, "p(0+) != 100");
  v.require(percentile_from_siter(0.99) == 98.0, "p(0.99) = " + format_number(percentile_from_siter(0.99)));
  double prev = 100.0;
  std::size_t steps = 0;
  const double s_zero = siter_at_zero_percentile();
  for (double s = 1e-12; s < s_zero; s *= 1.05, ++steps) {
    const double p = percentile_from_siter(s);
    if (!(p < prev)) {
      v.require(false, "not strictly decreasing at s " + format_number(s));
      break;
    }
    prev = p;
  }
  v.require(percentile_from_siter(s_zero * 1.5) == 0.0, "no clamp past the zero point");

  Rng rng = make_rng(0xacce55, 3);
  std::uniform_int_distribution<std::size_t> len(1, 64);
  std::uniform_real_distribution<double> value(-5.0, 5.0), pct(0.0, 100.0);
  int mismatches = 0;
  for (int c = 0; c < 200; ++c) {
    std::vector<double> x(len(rng));
    for (auto& e : x) e = value(rng);
    auto sorted = x;
    std::sort(sorted.begin(), sorted.end());
    for (double p : {0.0, 50.0, 100.0, pct(rng)})
      if (std::abs(percentile(x, p) - brute_percentile(sorted, p)) > 1e-12) ++mismatches;
  }
  v.require(mismatches == 0, std::to_string(mismatches) + " percentile mismatches");
  v.note(std::to_string(steps) + " ladder steps checked, 800 percentile cases");
  report(3, v, seconds_since(t0), 5.0);
}

void criterion_heavy_tails() {
  const auto t0 = clock_type::now();
  Verdict v;
  std::map<double, std::pair<double, double>> sums;
  int fails[3][2] = {};  // w = 2, 3, 0.5 against w = 1; kurtosis, P99/P50
  const int seeds = 10;
  for (int seed = 0; seed < seeds; ++seed) {
    std::map<double, TailStats> t;
    for (double w : {0.5, 1.0, 2.0, 3.0}) {
      t[w] = pseudo_output_tails(w, static_cast<std::uint64_t>(seed));
      sums[w].first += t[w].excess_kurtosis / seeds;
      sums[w].second += t[w].p99_over_p50 / seeds;
    }
    int k = 0;
    for (double w : {2.0, 3.0, 0.5}) {
      if (!(t[w].excess_kurtosis > t[1.0].excess_kurtosis)) ++fails[k][0];
      if (!(t[w].p99_over_p50 > t[1.0].p99_over_p50)) ++fails[k][1];
      ++k;
    }
  }
  int k = 0;
  for (double w : {2.0, 3.0, 0.5}) {
    v.require(fails[k][0] == 0, "w=" + format_number(w) + " kurtosis not above w=1 on " + std::to_string(fails[k][0]) +
                                    "/10 seeds");
    v.require(fails[k][1] == 0, "w=" + format_number(w) + " P99/P50 not above w=1 on " + std::to_string(fails[k][1]) +
                                    "/10 seeds");
    ++k;
  }
  for (const auto& [w, s] : sums)
    v.note("w=" + format_number(w) + " mean kurtosis " + fixed(s.first, 3) + " P99/P50 " + fixed(s.second, 3));
  report(4, v, seconds_since(t0), 60.0);
}

// ---------------------------------------------------------------------------
// Desk grid shared by the benchmark criteria.

const std::vector<std::size_t> kSizes = {10, 50, 100};
const std::vector<Discovery> kDiscoveries = {Discovery::count(1), Discovery::fraction(0.1), Discovery::fraction(0.5),
                                             Discovery::fraction(1.0)};
const std::vector<std::uint64_t> kSeeds = {0, 1, 2, 3, 4};
const std::vector<Method> kMethods = {Method::none,    Method::eu,     Method::ssd_grid,
                                      Method::ptn_ssd, Method::ptn_lf, Method::ptn_xlf};

struct Row {
  std::string variant;  // "" for the default configuration
  ScenarioConfig cfg;
  ScenarioResult res;
};

struct Grid {
  std::vector<Row> rows;
  double seconds = 0.0;
  double ptn_search_seconds = 0.0;

  template <class Pred>
  std::vector<const Row*> select(Pred&& p) const {
    std::vector<const Row*> out;
    for (const auto& r : rows)
      if (p(r)) out.push_back(&r);
    return out;
  }
};

ScenarioConfig desk(Method m, std::size_t sm, const Discovery& d, std::uint64_t seed) {
  ScenarioConfig c;
  c.method = m;
  c.poison_count = sm;
  c.discovery = d;
  c.seeds = SeedSet::all(seed);
  c.id = to_string(m) + "-" + std::to_string(sm) + "-" + d.label() + "-" + std::to_string(seed);
  return c;
}

Grid run_grid(Lab& lab) {
  const auto t0 = clock_type::now();
  Grid g;
  for (std::uint64_t seed : kSeeds)
    for (std::size_t sm : kSizes)
      for (const auto& d : kDiscoveries) {
        for (Method m : kMethods) g.rows.push_back({"", desk(m, sm, d, seed), {}});
        auto add = [&](const std::string& name, auto&& edit) {
          ScenarioConfig c = desk(Method::ptn_xlf, sm, d, seed);
          edit(c.ptn);
          c.id += "-" + name;
          g.rows.push_back({name, c, {}});
        };
        add("s_step=2", [](PTNConfig& p) { p.s_step = 2.0; });
        add("rho=0.5", [](PTNConfig& p) { p.rho = 0.5; });
        add("rho=0.9", [](PTNConfig& p) { p.rho = 0.9; });
        for (std::size_t n : {2u, 4u, 8u}) add("parallel=" + std::to_string(n), [n](PTNConfig& p) { p.parallel = n; });
      }
  std::vector<ScenarioConfig> cfgs;
  for (const auto& r : g.rows) cfgs.push_back(r.cfg);
  std::cerr << "desk grid: " << cfgs.size() << " scenarios" << std::endl;
  const std::size_t chunk = 50;
  for (std::size_t i = 0; i < cfgs.size(); i += chunk) {
    std::vector<ScenarioConfig> part(cfgs.begin() + static_cast<std::ptrdiff_t>(i),
                                     cfgs.begin() + static_cast<std::ptrdiff_t>(std::min(cfgs.size(), i + chunk)));
    auto res = run_all(lab, part, 1);
    for (std::size_t j = 0; j < res.size(); ++j) g.rows[i + j].res = std::move(res[j]);
    std::cerr << "  " << std::min(cfgs.size(), i + chunk) << "/" << cfgs.size() << " after "
              << f2(seconds_since(t0)) << " s, " << lab.trainings() << " trainings" << std::endl;
  }
  for (const auto& r : g.rows)
    if (is_ptn(r.cfg.method)) g.ptn_search_seconds += r.res.t_search_s;
  g.seconds = seconds_since(t0);
  return g;
}

MeanStd healed_of(const std::vector<const Row*>& rows) {
  std::vector<double> v;
  for (const auto* r : rows) v.push_back(r->res.healed_pct);
  return mean_std(v);
}

MeanStd abs_damage_of(const std::vector<const Row*>& rows) {
  std::vector<double> v;
  for (const auto* r : rows) v.push_back(std::abs(r->res.damage_pts));
  return mean_std(v);
}

// Mean over seeds of per-seed means, with the spread across seeds.
MeanStd seed_level(const std::vector<const Row*>& rows, const std::function<double(const Row&)>& value) {
  std::map<std::uint64_t, std::vector<double>> per_seed;
  for (const auto* r : rows) per_seed[r->cfg.seeds.train].push_back(value(*r));
  std::vector<double> means;
  for (const auto& [s, v] : per_seed) means.push_back(mean_std(v).mean);
  return mean_std(means);
}

bool default_method(const Row& r, Method m) { return r.variant.empty() && r.cfg.method == m; }

void criterion_ptn_contract(const Grid& g) {
  Verdict v;
  std::size_t runs = 0, converged = 0, bound_fail = 0, threshold_fail = 0, par_fail = 0, errors = 0;
  std::map<std::string, const Row*> sequential;
  for (const auto& r : g.rows)
    if (default_method(r, Method::ptn_xlf)) sequential[r.cfg.seeds.tuple() + r.res.discovery + std::to_string(r.cfg.poison_count)] = &r;
  for (const auto& r : g.rows) {
    if (!is_ptn(r.cfg.method)) continue;
    ++runs;
    if (r.res.failed() || !r.res.trace) {
      ++errors;
      v.require(false, r.cfg.id + ": " + r.res.error);
      continue;
    }
    const auto& t = *r.res.trace;
    if (t.iterations() > ptn_iteration_bound(t.s_start, t.s_max, r.cfg.ptn.s_step)) ++bound_fail;
    if (t.status == SearchStatus::converged) {
      ++converged;
      if (!(r.res.acc_forget_after <= r.cfg.ptn.rho * r.res.acc_forget_before)) ++threshold_fail;
    }
    if (r.variant.rfind("parallel=", 0) == 0) {
      const Row* s = sequential.at(r.cfg.seeds.tuple() + r.res.discovery + std::to_string(r.cfg.poison_count));
      if (s->res.status == "converged") {
        const bool ok = t.status == SearchStatus::converged &&
                        r.res.acc_forget_after <= r.cfg.ptn.rho * r.res.acc_forget_before &&
                        r.res.modified_count <= s->res.modified_count;
        if (!ok) {
          ++par_fail;
          if (par_fail <= 3) v.note("parallel mismatch " + r.cfg.id);
        }
      }
    }
  }
  v.require(errors == 0, std::to_string(errors) + " PTN runs failed");
  v.require(bound_fail == 0, std::to_string(bound_fail) + " runs exceeded the geometric bound");
  v.require(threshold_fail == 0, std::to_string(threshold_fail) + " converged runs above the threshold");
  v.require(par_fail == 0, std::to_string(par_fail) + " parallel runs broke the contract");
  v.note(std::to_string(runs) + " searches, " + std::to_string(converged) + " converged");
  report(5, v, g.ptn_search_seconds, 300.0);
}

void criterion_central_claim(const Grid& g) {
  Verdict v;
  for (const auto& d : kDiscoveries) {
    const auto label = d.label();
    auto at = [&](Method m) {
      return g.select([&](const Row& r) { return default_method(r, m) && r.res.discovery == label; });
    };
    const MeanStd xlf = healed_of(at(Method::ptn_xlf)), eu = healed_of(at(Method::eu));
    if (label != "1") {
      v.require(xlf.mean - eu.mean >= 20.0, "discovery " + label + ": XLF " + f2(xlf.mean) + " vs EU " + f2(eu.mean));
      v.note("discovery " + label + " XLF " + f2(xlf.mean) + " EU " + f2(eu.mean));
    } else {
      std::vector<double> dmg;
      for (const auto* r : at(Method::eu)) dmg.push_back(r->res.damage_pts);
      const double damage = mean_std(dmg).mean;
      v.require(eu.mean >= 95.0, "full discovery EU healed " + f2(eu.mean));
      v.require(std::abs(damage) <= 2.0, "full discovery EU damage " + f2(damage));
      v.note("discovery " + label + " EU healed " + f2(eu.mean) + " damage " + f2(damage));
    }
  }
  report(6, v, g.seconds, 1800.0);
}

void criterion_ordering(const Grid& g) {
  const auto t0 = clock_type::now();
  Verdict v;
  const std::vector<Method> order = {Method::ptn_xlf, Method::ptn_lf, Method::ptn_ssd, Method::ssd_grid, Method::none};
  std::map<Method, MeanStd> healed, damage;
  for (Method m : order) {
    auto rows = g.select([&](const Row& r) { return default_method(r, m); });
    healed[m] = seed_level(rows, [](const Row& r) { return r.res.healed_pct; });
    damage[m] = seed_level(rows, [](const Row& r) { return std::abs(r.res.damage_pts); });
    v.note(to_string(m) + " healed " + f2(healed[m].mean) + " +- " + f2(healed[m].std) + " |damage| " +
           f2(damage[m].mean) + " +- " + f2(damage[m].std));
  }
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    const auto &a = healed[order[i]], &b = healed[order[i + 1]];
    if (a.mean < b.mean) {
      const double slack = std::max(a.std, b.std);
      v.require(b.mean - a.mean <= slack, to_string(order[i]) + " < " + to_string(order[i + 1]) + " by " +
                                              f2(b.mean - a.mean) + " beyond 1 std " + f2(slack));
    }
  }
  for (Method m : {Method::ptn_lf, Method::ptn_ssd, Method::ssd_grid}) {
    const auto &x = damage[Method::ptn_xlf], &o = damage[m];
    if (x.mean > o.mean) {
      const double slack = std::max(x.std, o.std);
      v.require(x.mean - o.mean <= slack, "ptn_xlf |damage| above " + to_string(m) + " by " + f2(x.mean - o.mean) +
                                              " beyond 1 std " + f2(slack));
    }
  }
  report(7, v, seconds_since(t0), 60.0);
}

void criterion_sensitivity(const Grid& g) {
  const auto t0 = clock_type::now();
  Verdict v;
  auto variant = [&](const std::string& name) {
    return g.select([&](const Row& r) { return r.cfg.method == Method::ptn_xlf && r.variant == name; });
  };
  const auto base = variant(""), coarse = variant("s_step=2");
  const MeanStd hb = healed_of(base), hc = healed_of(coarse), db = abs_damage_of(base), dc = abs_damage_of(coarse);
  v.require(hc.mean >= hb.mean, "s_step 2.0 healed " + f2(hc.mean) + " below 1.1 " + f2(hb.mean));
  v.require(dc.mean >= db.mean, "s_step 2.0 |damage| " + f2(dc.mean) + " below 1.1 " + f2(db.mean));
  v.note("s_step 1.1 healed " + f2(hb.mean) + " |damage| " + f2(db.mean) + ", 2.0 healed " + f2(hc.mean) +
         " |damage| " + f2(dc.mean));
  for (const char* name : {"rho=0.5", "rho=0.9"}) {
    const MeanStd h = healed_of(variant(name));
    v.require(h.mean < hb.mean, std::string(name) + " healed " + f2(h.mean) + " not below rho=0.2 " + f2(hb.mean));
    v.note(std::string(name) + " healed " + f2(h.mean));
  }
  auto full = [&](Method m) {
    return g.select([&](const Row& r) { return default_method(r, m) && r.res.discovery == "1"; });
  };
  const MeanStd ps = healed_of(full(Method::ptn_ssd)), gs = healed_of(full(Method::ssd_grid));
  v.require(ps.mean > gs.mean, "full discovery ptn_ssd " + f2(ps.mean) + " not above ssd_grid " + f2(gs.mean));
  v.note("full discovery ptn_ssd " + f2(ps.mean) + " ssd_grid " + f2(gs.mean));
  report(8, v, seconds_since(t0), 60.0);
}

void criterion_one_shot(Lab& lab, const Grid& g) {
  const auto t0 = clock_type::now();
  Verdict v;
  for (const auto* r : g.select([](const Row& r) { return r.variant.empty() && r.res.discovery == "n=1"; }))
    v.require(!r->res.failed(), r->cfg.id + ": " + r->res.error);
  for (AttackKind a : {AttackKind::sine, AttackKind::moving}) {
    for (Method m : {Method::ptn_xlf, Method::ptn_lf, Method::ptn_ssd}) {
      ScenarioConfig c = desk(m, 100, Discovery::count(1), 0);
      c.attack.kind = a;
      const auto r = run_scenario(lab, c);
      v.require(r.forget_count == 1, to_string(a) + " forget count " + std::to_string(r.forget_count));
      if (a == AttackKind::sine) v.require(r.status == "converged" || r.status == "exhausted", "sine status " + r.status);
      v.note(to_string(a) + " " + to_string(m) + " " + r.status + " healed " + f2(r.healed_pct));
    }
  }
  report(9, v, seconds_since(t0), 600.0);
}

std::vector<std::string> stable_fields(const ScenarioResult& r) {
  auto f = csv_fields(r);
  for (const char* col : {"t_importance_s", "t_search_s", "t_total_s"}) {
    const auto it = std::find(csv_columns().begin(), csv_columns().end(), col);
    f[static_cast<std::size_t>(it - csv_columns().begin())] = "";
  }
  return f;
}

// trace content without the per-iteration wall-clock field
std::string trace_content(const PTNTrace& t) {
  json j = to_json(t);
  for (auto& r : j.at("records")) r.erase("seconds");
  return j.dump();
}

void criterion_determinism() {
  const auto t0 = clock_type::now();
  Verdict v;
  std::vector<ScenarioConfig> cfgs;
  for (Method m : kMethods) cfgs.push_back(desk(m, 50, Discovery::fraction(0.5), 7));
  ScenarioConfig sine = desk(Method::ptn_xlf, 50, Discovery::fraction(0.1), 7);
  sine.attack.kind = AttackKind::sine;
  cfgs.push_back(sine);
  Lab a, b;
  const auto ra = run_all(a, cfgs, 1), rb = run_all(b, cfgs, 2);
  std::size_t diff = 0;
  for (std::size_t i = 0; i < cfgs.size(); ++i)
    if (stable_fields(ra[i]) != stable_fields(rb[i])) {
      ++diff;
      v.require(false, cfgs[i].id + " rows differ");
    }

  const auto dir = std::filesystem::temp_directory_path() / "potionlab_acceptance_cache";
  std::filesystem::remove_all(dir);
  std::string first, second;
  std::size_t reloaded_trainings = 1;
  {
    Lab lab(dir);
    first = trace_content(*run_scenario(lab, cfgs[5]).trace);
  }
  {
    Lab lab(dir);
    second = trace_content(*run_scenario(lab, cfgs[5]).trace);
    reloaded_trainings = lab.trainings();
  }
  std::filesystem::remove_all(dir);
  v.require(first == second, "search trace changed after reloading the cache");
  v.require(reloaded_trainings == 0, "reload retrained " + std::to_string(reloaded_trainings) + " models");
  v.note(std::to_string(cfgs.size()) + " rows compared with timing columns excluded, " + std::to_string(diff) +
         " differ; trace after cache reload " + (first == second ? "identical" : "different"));
  report(10, v, seconds_since(t0), 600.0);
}

}  // namespace

int main() {
  criterion_gradients();
  criterion_dampening();
  criterion_percentile();
  criterion_heavy_tails();
  Lab lab;
  const Grid grid = run_grid(lab);
  criterion_ptn_contract(grid);
  criterion_central_claim(grid);
  criterion_ordering(grid);
  criterion_sensitivity(grid);
  criterion_one_shot(lab, grid);
  criterion_determinism();
  std::cout << (g_failures == 0 ? "all criteria passed" : std::to_string(g_failures) + " criteria failed") << std::endl;
  return g_failures == 0 ? 0 : 1;
}
