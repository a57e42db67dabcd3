#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "malsde/app.hpp"

using namespace malsde;

namespace {

ExperimentConfig small(const std::string& text) {
  Json doc = parse_json_text(text);
  return parse_config(doc, text);
}

}  // namespace

TEST(App, SimulatePointMassMoments) {
  auto c = small(R"({"model": {"id": "bm", "x0": [1.5], "sigma": [0]}, "steps": 8, "paths": 200,
                     "simulate": {"moments": [2, 4], "dump_paths": 2}})");
  const auto r = run_subcommand("simulate", c);
  const auto* m = r.table("moments.csv");
  ASSERT_NE(m, nullptr);
  EXPECT_EQ(m->size(), 2u * 9u);
  const std::string s = m->str();
  EXPECT_NE(s.find(",2.25,0\n"), std::string::npos);
  EXPECT_NE(s.find(",5.0625,0\n"), std::string::npos);
  const auto* ch = r.table("chains.csv");
  ASSERT_NE(ch, nullptr);
  EXPECT_EQ(ch->size(), 2u * 9u);
  EXPECT_EQ(ch->columns().back(), "dw1");
}

TEST(App, OracleDefaultPasses) {
  const auto r = run_subcommand("oracle", small("{}"));
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.table("oracle.csv")->size(), 8u);
}

TEST(App, DensityOnBrownianPasses) {
  auto c = small(R"({"model": {"id": "bm", "x0": [0], "sigma": [1]}, "steps": 16, "paths": 20000,
                     "density": {"points": 11, "width_sd": 3}, "bounds": {"fit_samples": 1000}})");
  const auto r = run_subcommand("density", c);
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.table("density.csv")->size(), 11u);
  EXPECT_TRUE(r.summary.contains("envelope"));
}

TEST(App, ByteIdenticalAcrossWorkerCounts) {
  const std::string base = R"({"model": {"id": "double-well-1d", "x0": [0.2]}, "steps": 32, "paths": 3000,
                               "density": {"points": 7}, "bounds": {"fit_samples": 1000}, "workers": )";
  const auto a = run_subcommand("density", small(base + "1}"));
  const auto b = run_subcommand("density", small(base + "3}"));
  EXPECT_EQ(a.table("density.csv")->str(), b.table("density.csv")->str());
  const auto s1 = run_subcommand("simulate", small(base + "1}"));
  const auto s2 = run_subcommand("simulate", small(base + "2}"));
  EXPECT_EQ(s1.table("moments.csv")->str(), s2.table("moments.csv")->str());
}

TEST(App, ConvergeOnOuRecoversWeakOrderOne) {
  auto c = small(R"({"model": {"id": "ou", "x0": [0.5], "sigma": [1], "mu": [0], "kappa": 1}, "steps": 64,
                     "converge": {"paths": 500, "steps": [64, 128, 256]}})");
  const auto r = run_subcommand("converge", c);
  EXPECT_TRUE(r.pass);
  EXPECT_NE(r.table("converge.csv")->str().find("weak_error_slope"), std::string::npos);
}

TEST(App, UnknownSubcommand) { EXPECT_THROW(run_subcommand("plot", small("{}")), ConfigError); }
