#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rapid/commands.hpp"
#include "rapid/metrics.hpp"

using namespace rapid;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path p = fs::temp_directory_path() / "rapid_cmd_test" / info->name();
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

RunArgs quick_run(const fs::path& out, std::vector<std::string> extra = {}) {
  RunArgs a;
  a.overrides = {"T=3", "lr=0.5"};
  a.overrides.insert(a.overrides.end(), extra.begin(), extra.end());
  a.out = out.string();
  return a;
}

TEST(Commands, TrainWritesOutputs) {
  const fs::path dir = scratch() / "run";
  std::ostringstream out, err;
  RunArgs a = quick_run(dir, {"H=4", "checkpoint_every=4"});
  ASSERT_EQ(cmd_train(a, out, err), kExitOk) << err.str();
  for (const char* f : {"resolved.cfg", "metrics.csv", "summary.json", "token_trace.csv",
                        "checkpoints/step_4.bin", "checkpoints/step_8.bin",
                        "checkpoints/step_12.bin", "checkpoints/step_12.bin.txt"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  EXPECT_NE(slurp(dir / "resolved.cfg").find("N_inference = 64"), std::string::npos);
  auto summary = read_json(dir / "summary.json");
  EXPECT_EQ(summary["gradient_steps"], 12);
  EXPECT_EQ(summary["generations"], 192);
  EXPECT_EQ(summary["H"], 4);
  EXPECT_TRUE(summary["initial_oracle_J"].is_number());
  EXPECT_TRUE(summary["cost_model"].contains("note"));
  std::ifstream csv(dir / "metrics.csv");
  EXPECT_EQ(read_metrics_csv(csv).size(), 12u);
  EXPECT_EQ(slurp(dir / "token_trace.csv").substr(0, 19), "position,log_ratio\n");
}

TEST(Commands, TrainIsByteDeterministic) {
  const fs::path root = scratch();
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train(quick_run(root / "a", {"seed=7"}), out, err), kExitOk);
  ASSERT_EQ(cmd_train(quick_run(root / "b", {"seed=7", "workers=3"}), out, err), kExitOk);
  ASSERT_EQ(cmd_train(quick_run(root / "c", {"seed=8"}), out, err), kExitOk);
  EXPECT_EQ(slurp(root / "a" / "metrics.csv"), slurp(root / "b" / "metrics.csv"));
  EXPECT_NE(slurp(root / "a" / "metrics.csv"), slurp(root / "c" / "metrics.csv"));
}

TEST(Commands, SeedFlag) {
  const fs::path root = scratch();
  std::ostringstream out, err;
  RunArgs a = quick_run(root / "a");
  a.seed = 7;
  ASSERT_EQ(cmd_train(a, out, err), kExitOk);
  ASSERT_EQ(cmd_train(quick_run(root / "b", {"seed=7"}), out, err), kExitOk);
  EXPECT_EQ(slurp(root / "a" / "metrics.csv"), slurp(root / "b" / "metrics.csv"));
}

TEST(Commands, ConfigErrorExitCode) {
  const fs::path root = scratch();
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train(quick_run(root / "x", {"N_group=3"}), out, err), kExitConfigError);
  EXPECT_NE(err.str().find("N_group"), std::string::npos) << err.str();
  EXPECT_FALSE(fs::exists(root / "x"));

  RunArgs missing;
  missing.config_path = (root / "nope.cfg").string();
  missing.out = (root / "y").string();
  EXPECT_EQ(cmd_train(missing, out, err), kExitConfigError);
}

TEST(Commands, ConfigFileLineInError) {
  const fs::path root = scratch();
  {
    std::ofstream os(root / "run.cfg");
    os << "[train]\nN_step = 16\nN_group = 5\n";
  }
  RunArgs a;
  a.config_path = (root / "run.cfg").string();
  a.out = (root / "x").string();
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train(a, out, err), kExitConfigError);
  EXPECT_NE(err.str().find("run.cfg:3"), std::string::npos) << err.str();
}

TEST(Commands, NumericAbortExitCode) {
  const fs::path dir = scratch() / "boom";
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train(quick_run(dir, {"lr=1e300", "T=5"}), out, err), kExitNumericAbort);
  EXPECT_TRUE(fs::exists(dir / "abort_batch.json"));
  EXPECT_NE(err.str().find("abort_batch.json"), std::string::npos);
  auto dump = read_json(dir / "abort_batch.json");
  EXPECT_EQ(dump["batch"].size(), 16u);
}

TEST(Commands, OutputRootFromEnvironment) {
  const fs::path root = scratch();
  EXPECT_EQ(resolve_out_dir("cli", "cfg", "train"), fs::path("cli"));
  EXPECT_EQ(resolve_out_dir("", "cfg", "train"), fs::path("cfg"));
  ::setenv(kOutRootEnv, root.c_str(), 1);
  EXPECT_EQ(resolve_out_dir("", "", "train"), root / "train");
  RunArgs a = quick_run("");
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train(a, out, err), kExitOk);
  EXPECT_TRUE(fs::exists(root / "train" / "metrics.csv"));
  ::unsetenv(kOutRootEnv);
  EXPECT_EQ(resolve_out_dir("", "", "train"), fs::path("rapid_out") / "train");
}

TEST(Commands, SweepSummary) {
  const fs::path dir = scratch() / "sweep";
  SweepArgs s;
  s.run = quick_run(dir, {"steps=16"});
  s.h_values = {2, 4, 8};
  s.seeds = {1, 2};
  s.jobs = 3;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_sweep(s, out, err), kExitOk) << err.str();
  auto j = read_json(dir / "sweep_summary.json");
  EXPECT_EQ(j["cells"].size(), 6u);
  EXPECT_EQ(j["per_H"].size(), 3u);
  EXPECT_EQ(j["failed_cells"], 0);
  for (const char* k : {"r_H_staleness", "r_H_final_reward", "r_H_simulated_cost"}) {
    EXPECT_TRUE(j["correlations"][k].is_number()) << k;
  }
  EXPECT_TRUE(fs::exists(dir / "H8_seed2" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / "sweep.csv"));

  // Same cells in serial produce the same files.
  const fs::path serial = dir.parent_path() / "serial";
  s.run.out = serial.string();
  s.jobs = 1;
  ASSERT_EQ(cmd_sweep(s, out, err), kExitOk);
  EXPECT_EQ(slurp(dir / "sweep_summary.json"), slurp(serial / "sweep_summary.json"));
}

TEST(Commands, SweepSingleSeedHasZeroStd) {
  const fs::path dir = scratch() / "sweep";
  SweepArgs s;
  s.run = quick_run(dir, {"steps=8"});
  s.h_values = {2, 4};
  s.seeds = {3};
  std::ostringstream out, err;
  ASSERT_EQ(cmd_sweep(s, out, err), kExitOk);
  for (const auto& h : read_json(dir / "sweep_summary.json")["per_H"]) {
    EXPECT_EQ(h["staleness_std"], 0.0);
    EXPECT_EQ(h["final_reward_std"], 0.0);
  }
}

TEST(Commands, SweepContinuesPastFailedCells) {
  const fs::path dir = scratch() / "sweep";
  SweepArgs s;
  s.run = quick_run(dir, {"steps=8"});
  s.h_values = {2, 16};  // 8 steps is not a multiple of 16
  s.seeds = {1};
  std::ostringstream out, err;
  EXPECT_EQ(cmd_sweep(s, out, err), kExitConfigError);
  auto j = read_json(dir / "sweep_summary.json");
  EXPECT_EQ(j["failed_cells"], 1);
  EXPECT_TRUE(fs::exists(dir / "H2_seed1" / "metrics.csv"));
}

TEST(Commands, SweepNeedsTwoHValues) {
  SweepArgs s;
  s.run = quick_run(scratch());
  s.h_values = {4};
  std::ostringstream out, err;
  EXPECT_EQ(cmd_sweep(s, out, err), kExitConfigError);
}

TEST(Commands, ReportRegeneratesSummaries) {
  const fs::path dir = scratch() / "sweep";
  SweepArgs s;
  s.run = quick_run(dir, {"steps=8"});
  s.h_values = {2, 4};
  s.seeds = {1, 2};
  std::ostringstream out, err;
  ASSERT_EQ(cmd_sweep(s, out, err), kExitOk);
  const std::string before = slurp(dir / "sweep_summary.json");
  auto cell = read_json(dir / "H2_seed1" / "summary.json");
  fs::remove(dir / "sweep_summary.json");
  fs::remove(dir / "H2_seed1" / "summary.json");
  ASSERT_EQ(cmd_report(dir.string(), out, err), kExitOk) << err.str();
  EXPECT_EQ(slurp(dir / "sweep_summary.json"), before);
  auto again = read_json(dir / "H2_seed1" / "summary.json");
  EXPECT_EQ(again["simulated_cost"], cell["simulated_cost"]);
  EXPECT_EQ(again["final_oracle_J"], cell["final_oracle_J"]);
  ASSERT_EQ(cmd_report((dir / "H4_seed2").string(), out, err), kExitOk);
  EXPECT_EQ(cmd_report((dir / "H4_seed2" / "checkpoints").string(), out, err), kExitConfigError);
}

TEST(Commands, VerifyPasses) {
  VerifyArgs v;
  v.out = (scratch() / "verify").string();
  std::ostringstream out, err;
  EXPECT_EQ(cmd_verify(v, out, err), kExitOk) << out.str();
  EXPECT_NE(out.str().find("PASS loo_iw_grpg_unbiased_off_policy"), std::string::npos);
  EXPECT_FALSE(fs::exists(v.out));
}

TEST(Commands, VerifyDetectsFlippedAdvantage) {
  VerifyArgs v;
  v.out = (scratch() / "verify").string();
  v.hooks.iw_grpg = [](const IwOptions& opts) -> EstimatorFn {
    auto real = iw_grpg_estimator(opts);
    return [real](std::span<const GroupBatch> g, const Policy& p) { return GradientVector(-real(g, p)); };
  };
  std::ostringstream out, err;
  EXPECT_EQ(cmd_verify(v, out, err), kExitVerifyFailed);
  EXPECT_NE(out.str().find("FAIL loo_iw_grpg_unbiased_off_policy"), std::string::npos);
  auto failures = read_json(fs::path(v.out) / "verify_failures.json");
  ASSERT_FALSE(failures.empty());
  EXPECT_TRUE(failures[0].contains("instance"));
}

TEST(Commands, VerifyDetectsBrokenGrpg) {
  VerifyArgs v;
  v.out = (scratch() / "verify").string();
  auto real = grpg_estimator();
  v.hooks.grpg = [real](std::span<const GroupBatch> g, const Policy& p) {
    return GradientVector(1.5 * real(g, p));
  };
  std::ostringstream out, err;
  EXPECT_EQ(cmd_verify(v, out, err), kExitVerifyFailed);
}

TEST(Commands, VerifyBadLevel) {
  VerifyArgs v;
  v.level = "extreme";
  std::ostringstream out, err;
  EXPECT_EQ(cmd_verify(v, out, err), kExitConfigError);
}

}  // namespace
