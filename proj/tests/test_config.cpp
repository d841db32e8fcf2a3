#include <gtest/gtest.h>

#include "potionlab/potionlab.hpp"

using namespace potionlab;

namespace {

json minimal() {
  return json::parse(R"({
    "version": 1,
    "name": "t",
    "data": {"blobs": {"train": 200, "test": 50}},
    "attack": {"kind": "badnet"},
    "poison_count": 10,
    "discovery": 0.5,
    "method": "ptn_xlf",
    "seeds": {"train": 1, "poison": 2, "discovery": 3, "search": 4}
  })");
}

std::string error_path(const json& j) {
  try {
    run_config_from_json(j);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<no error>";
}

}  // namespace

TEST(Config, MinimalUsesDefaults) {
  auto c = run_config_from_json(minimal());
  EXPECT_EQ(c.base.method, Method::ptn_xlf);
  EXPECT_EQ(c.base.ptn.rho, 0.2);
  EXPECT_EQ(c.base.ptn.s_step, 1.1);
  EXPECT_EQ(c.base.ptn.b_start, 25.0);
  EXPECT_TRUE(c.base.exclude_target);
  EXPECT_EQ(c.base.seeds.poison, 2u);
  EXPECT_EQ(expand(c).size(), 1u);
  EXPECT_EQ(expand(c)[0].id, "t");
}

TEST(Config, UnknownKeysNameThePath) {
  auto j = minimal();
  j["colour"] = 1;
  EXPECT_EQ(error_path(j), "colour");
  j = minimal();
  j["ptn"] = {{"rho", 0.2}, {"s_stepp", 1.1}};
  EXPECT_EQ(error_path(j), "ptn.s_stepp");
  j = minimal();
  j["data"]["blobs"]["clases"] = 3;
  EXPECT_EQ(error_path(j), "data.blobs.clases");
}

TEST(Config, MissingAndInvalidValues) {
  for (const char* key : {"version", "data", "attack", "poison_count", "discovery", "method", "seeds"}) {
    auto j = minimal();
    j.erase(key);
    EXPECT_EQ(error_path(j), key);
  }
  auto j = minimal();
  j["version"] = 2;
  EXPECT_EQ(error_path(j), "version");
  j = minimal();
  j["method"] = "ssd";
  EXPECT_EQ(error_path(j), "method");
  j = minimal();
  j["poison_count"] = 0;
  EXPECT_EQ(error_path(j), "poison_count");
  j = minimal();
  j["poison_count"] = "ten";
  EXPECT_EQ(error_path(j), "poison_count");
  j = minimal();
  j["sweep"] = {{"rho", {0.5, 1.5}}};
  EXPECT_EQ(error_path(j), "sweep.rho");
  j = minimal();
  j["sweep"] = {{"method", json::array()}};
  EXPECT_EQ(error_path(j), "sweep.method");
}

TEST(Config, DiscoveryEncodings) {
  auto j = minimal();
  j["discovery"] = {{"count", 1}};
  auto c = run_config_from_json(j);
  EXPECT_EQ(c.base.discovery.resolve(100), 1u);
  j["discovery"] = 1.5;
  EXPECT_EQ(error_path(j), "discovery");
  j["discovery"] = {{"count", 0}};
  EXPECT_EQ(error_path(j), "discovery.count");
}

TEST(Config, EchoRoundTrip) {
  auto j = minimal();
  j["sweep"] = {{"rho", {0.2, 0.5, 0.9}}, {"method", {"ptn_xlf", "ptn_lf"}}, {"discovery", {0.1, json{{"count", 1}}}}};
  j["grid"] = {{"alphas", {0.1, "inf"}}, {"lambda_multipliers", {1.0}}};
  j["model"] = to_json(mlp_spec({16, 16, 1}, {16}, 10, 4));
  const auto c = run_config_from_json(j);
  const json echo = to_json(c);
  const auto back = run_config_from_json(echo);
  EXPECT_EQ(back, c);
  EXPECT_EQ(to_json(back), echo);
  EXPECT_TRUE(std::isinf(back.base.grid.alphas[1]));
}

TEST(Config, SweepExpansionOrderAndIds) {
  auto j = minimal();
  j["sweep"] = {{"method", {"ptn_xlf", "ptn_lf"}}, {"rho", {0.2, 0.5, 0.9}}};
  const auto rows = expand(run_config_from_json(j));
  ASSERT_EQ(rows.size(), 6u);
  const std::vector<std::pair<Method, double>> want = {{Method::ptn_xlf, 0.2}, {Method::ptn_xlf, 0.5},
                                                       {Method::ptn_xlf, 0.9}, {Method::ptn_lf, 0.2},
                                                       {Method::ptn_lf, 0.5},  {Method::ptn_lf, 0.9}};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].method, want[i].first);
    EXPECT_EQ(rows[i].ptn.rho, want[i].second);
    EXPECT_EQ(rows[i].id, "t-" + std::to_string(i));
  }
}

TEST(Config, SeedAxisSetsAllSeeds) {
  auto j = minimal();
  j["sweep"] = {{"seed", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10}}};
  const auto rows = expand(run_config_from_json(j));
  ASSERT_EQ(rows.size(), 11u);
  EXPECT_EQ(rows[3].seeds, SeedSet::all(3));
  EXPECT_EQ(rows[3].id, "t-03");
}

TEST(Config, SeedOverride) {
  auto c = run_config_from_json(minimal());
  apply_seed_override(c, "poison=99");
  apply_seed_override(c, "data=5");
  EXPECT_EQ(c.base.seeds.poison, 99u);
  EXPECT_EQ(c.base.seeds.train, 1u);
  EXPECT_EQ(c.base.data.blobs->seed, 5u);
  EXPECT_THROW(apply_seed_override(c, "poison"), ConfigError);
  EXPECT_THROW(apply_seed_override(c, "poison=-1"), ConfigError);
  EXPECT_THROW(apply_seed_override(c, "colour=1"), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"quickstart.json", "badnet_sweep.json"}) {
    const auto c = load_run_config(std::string(POTIONLAB_CONFIG_DIR) + "/" + name);
    EXPECT_FALSE(expand(c).empty()) << name;
  }
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), ConfigError);
}
