// rapid: experiment runner for large-batch inference with importance-weighted
// mini-batch policy-gradient updates.
//
//   rapid train  --config run.cfg [--set key=value]... [--seed N] [--out DIR]
//   rapid sweep  --config run.cfg --H 2,4,8,16 --seeds 1,2,3 [--jobs N] [--out DIR]
//   rapid verify [--level quick|full] [--out DIR]
//   rapid report --out DIR
//
// Exit codes: 0 success, 1 verification failure, 2 config error, 3 numeric abort.

#include <iostream>

#include "CLI11.hpp"
#include "rapid/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"RAPID off-policy RL on enumerable synthetic tasks"};
  app.require_subcommand(1);

  rapid::RunArgs train_args;
  auto* train = app.add_subcommand("train", "Run one training configuration");
  train->add_option("--config", train_args.config_path, "Config file (key = value with sections)");
  train->add_option("--set", train_args.overrides, "Override, e.g. --set H=4")->take_all();
  train->add_option("--seed", train_args.seed, "Run seed");
  train->add_option("--out", train_args.out, "Output directory");

  rapid::SweepArgs sweep_args;
  auto* sweep = app.add_subcommand("sweep", "Cross product of H values and seeds");
  sweep->add_option("--config", sweep_args.run.config_path, "Base config file");
  sweep->add_option("--set", sweep_args.run.overrides, "Override applied to every cell")->take_all();
  sweep->add_option("--H", sweep_args.h_values, "Batch size ratios")->delimiter(',')->required();
  sweep->add_option("--seeds,--seed", sweep_args.seeds, "Seeds")->delimiter(',');
  sweep->add_option("--jobs", sweep_args.jobs, "Parallel cells")->check(CLI::PositiveNumber);
  sweep->add_option("--out", sweep_args.run.out, "Output directory");

  rapid::VerifyArgs verify_args;
  auto* verify = app.add_subcommand("verify", "Run the oracle verification suite");
  verify->add_option("--level", verify_args.level, "quick or full")
      ->check(CLI::IsMember({"quick", "full"}));
  verify->add_option("--out", verify_args.out, "Where failing instances are written");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Regenerate summaries from metrics CSVs");
  report->add_option("--out,dir", report_dir, "Run or sweep directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : rapid::kExitConfigError;
  }

  if (*train) return rapid::cmd_train(train_args, std::cout, std::cerr);
  if (*sweep) return rapid::cmd_sweep(sweep_args, std::cout, std::cerr);
  if (*verify) return rapid::cmd_verify(verify_args, std::cout, std::cerr);
  if (*report) return rapid::cmd_report(report_dir, std::cout, std::cerr);
  return rapid::kExitConfigError;
}
