#pragma once

#include <map>
#include <string>
#include <vector>

#include "rapid/tasks.hpp"
#include "rapid/trainer.hpp"

namespace rapid {

// Everything a single run needs: training settings, task, and outputs.
struct RunSpec {
  TrainConfig train;
  std::string task_name = "LastTokenMatch";
  TaskParams task;
  // Empty selects the task's default feature map.
  std::string features;
  std::string out_dir;
  // Write every k-th MetricsRecord to the CSV.
  int metrics_every = 1;
  // Checkpoint every k gradient steps and at the end; 0 writes only the final one.
  int checkpoint_every = 0;
};

// Flat "key = value" text with [section] headers and '#' comments.
//
//   [task]     name vocab prompts max_len bits seed features
//   [train]    algorithm N_inference N_group N_step H T steps lr optimizer momentum
//              eta clip_mode clip_leading leave_one_out importance_weighting
//              beta_kl seed minibatch workers
//   [metrics]  oracle_every metrics_every checkpoint_every a_inf b_inf a_bp b_bp
//   [output]   out
//
// H, when given, sets N_inference = H * N_step. steps, when given, sets
// T = steps / H. Bare keys in overrides resolve to their unique section;
// "seed" means train.seed.
class ConfigSource {
 public:
  struct Entry {
    std::string value;
    // "file:line" or "--set" for provenance in error messages.
    std::string origin;
  };

  static ConfigSource parse(const std::string& text, const std::string& origin_name);
  static ConfigSource load(const std::string& path);

  // "key=value" with key bare or "section.key".
  void set_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value, const std::string& origin);

  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  std::map<std::string, Entry> entries_;
};

// Applies defaults, then entries, derives H/steps, and validates. Errors are
// ConfigError with the offending origin in the message.
RunSpec resolve(const ConfigSource& source);

// Canonical text form; parses back to the same RunSpec.
std::string to_config_text(const RunSpec& spec);

// Task and initial policy described by the spec.
Task make_task(const RunSpec& spec);

}  // namespace rapid
