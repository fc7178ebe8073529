#include "rapid/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>
#include <optional>
#include <tuple>

#include "rapid/checkpoint.hpp"
#include "rapid/config.hpp"
#include "rapid/errors.hpp"
#include "rapid/metrics.hpp"
#include "rapid/trainer.hpp"

namespace fs = std::filesystem;

namespace rapid {

fs::path resolve_out_dir(const std::string& cli_out, const std::string& config_out,
                         const std::string& default_name) {
  if (!cli_out.empty()) return cli_out;
  if (!config_out.empty()) return config_out;
  if (const char* root = std::getenv(kOutRootEnv); root && *root) return fs::path(root) / default_name;
  return fs::path("rapid_out") / default_name;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

nlohmann::json sample_json(const Sample& s) {
  return {{"prompt_id", s.prompt.id},
          {"prompt_class", s.prompt.cls},
          {"tokens", s.generation.tokens},
          {"behavior_token_logprobs", s.generation.logprobs},
          {"behavior_logprob", s.behavior_logprob},
          {"reward", s.reward},
          {"group_id", s.group_id}};
}

ConfigSource load_source(const RunArgs& args) {
  ConfigSource src = args.config_path.empty() ? ConfigSource{} : ConfigSource::load(args.config_path);
  for (const auto& o : args.overrides) src.set_override(o);
  if (args.seed) src.set("train.seed", std::to_string(*args.seed), "--seed");
  return src;
}

std::vector<MetricsRecord> thin(const std::vector<MetricsRecord>& records, int every) {
  if (every <= 1) return records;
  std::vector<MetricsRecord> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if ((i + 1) % static_cast<std::size_t>(every) == 0 || i + 1 == records.size()) {
      out.push_back(records[i]);
    }
  }
  return out;
}

struct RunOutcome {
  int code = kExitOk;
  std::string message;
  nlohmann::json summary;
};

// One complete training run into `dir`. Errors are mapped to exit codes.
RunOutcome execute_run(const RunSpec& spec, const fs::path& dir) {
  RunOutcome outcome;
  try {
    fs::create_directories(dir / "checkpoints");
    write_text(dir / "resolved.cfg", to_config_text(spec));

    const Task task = make_task(spec);
    const Policy initial = make_policy(task, spec.features);
    auto checkpoint = [&](const Policy& policy, int step) {
      Checkpoint ckpt{static_cast<std::uint32_t>(task.vocab.size), task.name,
                      static_cast<std::uint64_t>(step), policy.theta()};
      save_checkpoint(dir / "checkpoints" / ("step_" + std::to_string(step) + ".bin"), ckpt);
    };
    StepHook hook;
    if (spec.checkpoint_every > 0) {
      hook = [&](const TrainerState& state, const MetricsRecord&) {
        if (state.global_step % spec.checkpoint_every == 0) checkpoint(state.policy, state.global_step);
      };
    }

    std::optional<TrainResult> run;
    try {
      run.emplace(run_training(spec.train, task, initial, hook));
    } catch (const TrainingAborted& e) {
      nlohmann::json dump = {{"error", e.what()}, {"global_step", e.global_step()}};
      for (const auto& s : e.batch()) dump["batch"].push_back(sample_json(s));
      const fs::path dump_path = dir / "abort_batch.json";
      write_text(dump_path, dump.dump(2));
      outcome.code = kExitNumericAbort;
      outcome.message = std::string(e.what()) + "; batch dumped to " + dump_path.string();
      return outcome;
    }
    const TrainResult& result = *run;
    const int last_step = result.records.empty() ? 0 : result.records.back().global_step;
    if (spec.checkpoint_every == 0 || last_step % spec.checkpoint_every != 0) {
      checkpoint(result.policy, last_step);
    }

    {
      std::ofstream csv(dir / "metrics.csv", std::ios::trunc);
      write_metrics_csv(csv, thin(result.records, spec.metrics_every));
    }
    if (!result.final_batch.empty()) {
      // Longest generation of the final mini-batch, scored at the final policy.
      const auto it = std::max_element(
          result.final_batch.begin(), result.final_batch.end(), [](const Sample& a, const Sample& b) {
            return a.generation.tokens.size() < b.generation.tokens.size();
          });
      std::ofstream trace(dir / "token_trace.csv", std::ios::trunc);
      write_token_trace_csv(trace, token_weight_trace(*it, result.policy));
    }

    nlohmann::json summary = summarize_run(result.records, spec.train.cost, spec.train.n_step);
    summary["algorithm"] = to_string(spec.train.algorithm);
    summary["task"] = task.name;
    summary["H"] = spec.train.batch_size_ratio();
    summary["seed"] = spec.train.seed;
    summary["initial_oracle_J"] =
        result.initial_oracle_J ? nlohmann::json(*result.initial_oracle_J) : nlohmann::json();
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    outcome.summary = std::move(summary);
  } catch (const NumericError& e) {
    outcome.code = kExitNumericAbort;
    outcome.message = e.what();
  } catch (const Error& e) {
    outcome.code = kExitConfigError;
    outcome.message = e.what();
  } catch (const fs::filesystem_error& e) {
    outcome.code = kExitConfigError;
    outcome.message = e.what();
  }
  return outcome;
}

double json_number(const nlohmann::json& j, const char* key) {
  return j.contains(key) && j[key].is_number() ? j[key].get<double>() : 0.0;
}

struct CellResult {
  int h = 0;
  std::uint64_t seed = 0;
  int code = kExitOk;
  std::string message;
  nlohmann::json summary;
};

double final_reward(const nlohmann::json& summary) {
  if (summary.contains("final_oracle_J") && summary["final_oracle_J"].is_number()) {
    return summary["final_oracle_J"].get<double>();
  }
  return json_number(summary, "mean_reward");
}

nlohmann::json sweep_summary(const std::vector<CellResult>& cells) {
  nlohmann::json j;
  std::map<int, std::vector<const CellResult*>> by_h;
  std::vector<double> hs, stale, reward, cost;
  int failed = 0;
  for (const auto& c : cells) {
    nlohmann::json cell = {{"H", c.h}, {"seed", c.seed}, {"status", c.code == kExitOk ? "ok" : "failed"}};
    if (c.code != kExitOk) {
      ++failed;
      cell["exit_code"] = c.code;
      cell["error"] = c.message;
      j["cells"].push_back(cell);
      continue;
    }
    cell["mean_staleness"] = json_number(c.summary, "mean_staleness");
    cell["mean_clip_fraction"] = json_number(c.summary, "mean_clip_fraction");
    cell["final_reward"] = final_reward(c.summary);
    cell["simulated_cost"] = c.summary["simulated_cost"]["total"];
    j["cells"].push_back(cell);
    by_h[c.h].push_back(&c);
    hs.push_back(c.h);
    stale.push_back(json_number(c.summary, "mean_staleness"));
    reward.push_back(final_reward(c.summary));
    cost.push_back(c.summary["simulated_cost"]["total"].get<double>());
  }
  for (const auto& [h, group] : by_h) {
    std::vector<double> s, r, k, cf;
    for (const auto* c : group) {
      s.push_back(json_number(c->summary, "mean_staleness"));
      r.push_back(final_reward(c->summary));
      k.push_back(c->summary["simulated_cost"]["total"].get<double>());
      cf.push_back(json_number(c->summary, "mean_clip_fraction"));
    }
    j["per_H"].push_back({{"H", h},
                          {"runs", group.size()},
                          {"staleness_mean", mean(s)},
                          {"staleness_std", stddev(s)},
                          {"final_reward_mean", mean(r)},
                          {"final_reward_std", stddev(r)},
                          {"simulated_cost_mean", mean(k)},
                          {"simulated_cost_std", stddev(k)},
                          {"clip_fraction_mean", mean(cf)},
                          {"clip_fraction_std", stddev(cf)}});
  }
  auto corr = [&](const std::vector<double>& ys) -> nlohmann::json {
    try {
      return pearson(hs, ys);
    } catch (const Error&) {
      return nullptr;
    }
  };
  j["correlations"] = {{"r_H_staleness", corr(stale)},
                       {"r_H_final_reward", corr(reward)},
                       {"r_H_simulated_cost", corr(cost)}};
  j["failed_cells"] = failed;
  return j;
}

void write_sweep_csv(const fs::path& path, const std::vector<CellResult>& cells) {
  std::ofstream os(path, std::ios::trunc);
  os << "H,seed,status,mean_staleness,mean_clip_fraction,final_reward,simulated_cost\n";
  for (const auto& c : cells) {
    os << c.h << ',' << c.seed << ',' << (c.code == kExitOk ? "ok" : "failed");
    if (c.code == kExitOk) {
      os << ',' << json_number(c.summary, "mean_staleness") << ','
         << json_number(c.summary, "mean_clip_fraction") << ',' << final_reward(c.summary) << ','
         << c.summary["simulated_cost"]["total"].get<double>();
    } else {
      os << ",,,,";
    }
    os << '\n';
  }
}

std::string cell_name(int h, std::uint64_t seed) {
  return "H" + std::to_string(h) + "_seed" + std::to_string(seed);
}

}  // namespace

int cmd_train(const RunArgs& args, std::ostream& out, std::ostream& err) {
  RunSpec spec;
  try {
    spec = resolve(load_source(args));
  } catch (const Error& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  }
  const fs::path dir = resolve_out_dir(args.out, spec.out_dir, "train");
  const RunOutcome outcome = execute_run(spec, dir);
  if (outcome.code != kExitOk) {
    err << (outcome.code == kExitNumericAbort ? "numeric abort: " : "error: ") << outcome.message
        << '\n';
    return outcome.code;
  }
  out << "wrote " << (dir / "metrics.csv").string() << '\n';
  out << outcome.summary.dump(2) << '\n';
  return kExitOk;
}

int cmd_sweep(const SweepArgs& args, std::ostream& out, std::ostream& err) {
  if (args.h_values.size() < 2) {
    err << "config error: a sweep needs at least two H values\n";
    return kExitConfigError;
  }
  ConfigSource base;
  RunSpec base_spec;
  try {
    base = load_source(args.run);
    base_spec = resolve(base);
  } catch (const Error& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  }
  std::vector<std::uint64_t> seeds = args.seeds;
  if (seeds.empty()) seeds.push_back(base_spec.train.seed);
  const fs::path root = resolve_out_dir(args.run.out, base_spec.out_dir, "sweep");

  std::vector<CellResult> cells;
  for (int h : args.h_values) {
    for (std::uint64_t s : seeds) cells.push_back(CellResult{h, s, kExitOk, {}, {}});
  }

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      CellResult& cell = cells[i];
      try {
        ConfigSource src = base;
        src.set("train.H", std::to_string(cell.h), "sweep");
        src.set("train.seed", std::to_string(cell.seed), "sweep");
        const RunOutcome r = execute_run(resolve(src), root / cell_name(cell.h, cell.seed));
        cell.code = r.code;
        cell.message = r.message;
        cell.summary = r.summary;
      } catch (const Error& e) {
        cell.code = kExitConfigError;
        cell.message = e.what();
      }
      std::lock_guard lock(log_mutex);
      out << cell_name(cell.h, cell.seed) << ": "
          << (cell.code == kExitOk ? "ok" : "failed (" + cell.message + ")") << '\n';
    }
  };
  {
    const int jobs = std::clamp(args.jobs, 1, static_cast<int>(cells.size()));
    std::vector<std::jthread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }

  fs::create_directories(root);
  const nlohmann::json summary = sweep_summary(cells);
  write_text(root / "sweep_summary.json", summary.dump(2) + "\n");
  write_sweep_csv(root / "sweep.csv", cells);
  out << summary["correlations"].dump(2) << '\n';
  for (const auto& c : cells) {
    if (c.code != kExitOk) return c.code;
  }
  return kExitOk;
}

int cmd_verify(const VerifyArgs& args, std::ostream& out, std::ostream& err) {
  VerifyLevel level;
  try {
    level = parse_verify_level(args.level);
  } catch (const Error& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  }
  std::vector<CheckResult> checks;
  try {
    checks = run_verification(level, args.hooks);
  } catch (const Error& e) {
    err << "verification aborted: " << e.what() << '\n';
    CheckResult c;
    c.name = "verification_run";
    c.detail = e.what();
    checks.push_back(c);
  }
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& c : checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name << "  max_deviation=" << c.max_deviation
        << "  tolerance=" << c.tolerance;
    if (!c.detail.empty()) out << "  (" << c.detail << ")";
    out << '\n';
    if (!c.passed) failures.push_back(to_json(c));
  }
  if (failures.empty()) return kExitOk;
  const fs::path dir = resolve_out_dir(args.out, "", "verify");
  try {
    fs::create_directories(dir);
    write_text(dir / "verify_failures.json", failures.dump(2) + "\n");
    err << failures.size() << " check(s) failed; instances written to "
        << (dir / "verify_failures.json").string() << '\n';
  } catch (const std::exception& e) {
    err << failures.size() << " check(s) failed; could not write replay file: " << e.what() << '\n';
  }
  return kExitVerifyFailed;
}

int cmd_report(const std::string& dir_arg, std::ostream& out, std::ostream& err) {
  const fs::path dir(dir_arg);
  try {
    auto regenerate = [](const fs::path& run_dir) {
      std::ifstream csv(run_dir / "metrics.csv");
      if (!csv) throw Error("missing " + (run_dir / "metrics.csv").string());
      const auto records = read_metrics_csv(csv);
      RunSpec spec;
      if (fs::exists(run_dir / "resolved.cfg")) {
        spec = resolve(ConfigSource::load((run_dir / "resolved.cfg").string()));
      }
      nlohmann::json summary = summarize_run(records, spec.train.cost, spec.train.n_step);
      summary["algorithm"] = to_string(spec.train.algorithm);
      summary["task"] = spec.task_name;
      summary["H"] = spec.train.batch_size_ratio();
      summary["seed"] = spec.train.seed;
      write_text(run_dir / "summary.json", summary.dump(2) + "\n");
      return summary;
    };

    if (fs::exists(dir / "metrics.csv")) {
      out << regenerate(dir).dump(2) << '\n';
      return kExitOk;
    }
    std::vector<CellResult> cells;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_directory() || !fs::exists(entry.path() / "metrics.csv")) continue;
      const nlohmann::json s = regenerate(entry.path());
      cells.push_back(CellResult{s["H"].get<int>(), s["seed"].get<std::uint64_t>(), kExitOk, {}, s});
    }
    if (cells.empty()) {
      err << "error: no metrics.csv found in " << dir.string() << " or its subdirectories\n";
      return kExitConfigError;
    }
    std::sort(cells.begin(), cells.end(), [](const CellResult& a, const CellResult& b) {
      return std::tie(a.h, a.seed) < std::tie(b.h, b.seed);
    });
    const nlohmann::json summary = sweep_summary(cells);
    write_text(dir / "sweep_summary.json", summary.dump(2) + "\n");
    write_sweep_csv(dir / "sweep.csv", cells);
    out << summary.dump(2) << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfigError;
  }
}

}  // namespace rapid
