#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rapid/verify.hpp"

namespace rapid {

// Process exit codes of the rapid tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitVerifyFailed = 1;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitNumericAbort = 3;

// Environment variable naming the default output root.
inline constexpr const char* kOutRootEnv = "RAPID_OUT_ROOT";

struct RunArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct SweepArgs {
  RunArgs run;
  std::vector<int> h_values;
  std::vector<std::uint64_t> seeds;
  int jobs = 1;
};

struct VerifyArgs {
  std::string level = "quick";
  std::string out;
  VerifyHooks hooks;
};

// Output directory: --out, else the config's out key, else $RAPID_OUT_ROOT/<default_name>,
// else ./rapid_out/<default_name>.
std::filesystem::path resolve_out_dir(const std::string& cli_out, const std::string& config_out,
                                      const std::string& default_name);

// Writes resolved.cfg, metrics.csv, summary.json, token_trace.csv and
// checkpoints/ under the output directory.
int cmd_train(const RunArgs& args, std::ostream& out, std::ostream& err);

// Runs every (H, seed) cell into <out>/H<h>_seed<s>/ and writes
// sweep.csv and sweep_summary.json.
int cmd_sweep(const SweepArgs& args, std::ostream& out, std::ostream& err);

int cmd_verify(const VerifyArgs& args, std::ostream& out, std::ostream& err);

// Regenerates summary.json (single run) or the sweep summary from CSVs.
int cmd_report(const std::string& dir, std::ostream& out, std::ostream& err);

}  // namespace rapid
