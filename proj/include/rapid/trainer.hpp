#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rapid/errors.hpp"
#include "rapid/estimators.hpp"
#include "rapid/metrics.hpp"
#include "rapid/policy.hpp"
#include "rapid/tasks.hpp"

namespace rapid {

enum class Algorithm { kRapid, kGrpgOnPolicy, kGrpoKl };
enum class Optimizer { kSgd, kMomentum };
// How inner steps draw mini-batches from the phase dataset.
enum class MinibatchOrder { kIterate, kResample };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& name);
std::string to_string(Optimizer o);
Optimizer parse_optimizer(const std::string& name);
std::string to_string(MinibatchOrder m);
MinibatchOrder parse_minibatch_order(const std::string& name);

struct TrainConfig {
  int n_inference = 64;
  int n_group = 4;
  int n_step = 16;
  // Outer loop count T.
  int outer_steps = 10;

  ClipConfig clip;
  bool clip_leading = true;
  bool leave_one_out = false;
  bool importance_weighting = true;

  double learning_rate = 0.05;
  Optimizer optimizer = Optimizer::kSgd;
  double momentum = 0.9;

  Algorithm algorithm = Algorithm::kRapid;
  double beta_kl = kDefaultKlBeta;

  std::uint64_t seed = 0;
  MinibatchOrder minibatch = MinibatchOrder::kIterate;
  // Sampling threads; results do not depend on it.
  int workers = 1;
  // Evaluate the exact objective every k gradient steps and at the last one;
  // 0 disables the oracle.
  int oracle_every = 0;
  CostModel cost;

  // H = N_inference / N_step.
  int batch_size_ratio() const { return n_step > 0 ? n_inference / n_step : 0; }
  int groups_per_step() const { return n_group > 0 ? n_step / n_group : 0; }
};

// Throws ConfigError naming the first violated invariant.
void validate(const TrainConfig& config);

struct TrainerState {
  Policy policy;
  // Behavior snapshot mu; replaced only at outer-step boundaries.
  Policy behavior;
  int outer_step = 0;
  int inner_step = 0;
  int global_step = 0;
  std::int64_t generations = 0;
  std::int64_t snapshots = 0;
  Eigen::VectorXd velocity;

  explicit TrainerState(const Policy& initial);
};

// theta <- theta + lr * g (sgd) or with a momentum accumulator v <- m v + g.
// Throws NumericError on a non-finite gradient.
TrainerState apply_update(TrainerState state, const GradientVector& gradient,
                          const TrainConfig& config);

// Raised when a gradient step produces non-finite values. Carries the
// offending mini-batch for diagnostics.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, int global_step, std::vector<Sample> batch)
      : NumericError(what), global_step_(global_step), batch_(std::move(batch)) {}

  int global_step() const { return global_step_; }
  const std::vector<Sample>& batch() const { return batch_; }

 private:
  int global_step_;
  std::vector<Sample> batch_;
};

struct TrainResult {
  Policy policy;
  std::vector<MetricsRecord> records;
  std::optional<double> initial_oracle_J;
  // Mini-batch of the last gradient step, as sampled.
  std::vector<Sample> final_batch;
};

// Called after every gradient step with the updated state.
using StepHook = std::function<void(const TrainerState&, const MetricsRecord&)>;

// Large-batch inference phases, each followed by H importance-weighted
// group-relative gradient steps on disjoint mini-batches.
TrainResult run_rapid(const TrainConfig& config, const Task& task, const Policy& initial,
                      const StepHook& hook = {});

// Sample N_step, take one plain GRPG step, repeat. N_inference is ignored.
TrainResult run_onpolicy_grpg(const TrainConfig& config, const Task& task, const Policy& initial,
                              const StepHook& hook = {});

// RAPID batching with the KL-regularized gradient against the phase snapshot.
TrainResult run_grpo_kl(const TrainConfig& config, const Task& task, const Policy& initial,
                        const StepHook& hook = {});

// Dispatches on config.algorithm.
TrainResult run_training(const TrainConfig& config, const Task& task, const Policy& initial,
                         const StepHook& hook = {});

// Samples one inference phase: `prompts.size()` groups of n_group generations.
// Group p uses an rng stream derived from (seed, outer_step, p).
std::vector<Sample> sample_phase(const Policy& policy, const Task& task,
                                 const std::vector<Prompt>& prompts, int n_group,
                                 std::uint64_t seed, int outer_step, int workers = 1);

}  // namespace rapid
