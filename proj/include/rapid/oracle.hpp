#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>

#include "rapid/estimators.hpp"
#include "rapid/policy.hpp"
#include "rapid/tasks.hpp"

namespace rapid {

// Exact quantities on enumerable tasks, computed by summing over every
// output sequence. Ground truth for all estimator checks.

struct OracleReport {
  double exact_J = 0.0;
  GradientVector exact_gradient;
  std::map<int, double> values;
  // Total output sequences enumerated across prompts.
  std::uint64_t outcome_count = 0;
};

// V(x) = sum_y P(y|x) R(x, y).
double exact_value(const Policy& policy, const Task& task, const Prompt& prompt,
                   std::uint64_t cap = kDefaultEnumerationCap);

// J = mean over prompts of V(x).
double exact_objective(const Policy& policy, const Task& task,
                       std::uint64_t cap = kDefaultEnumerationCap);

// grad J = mean over prompts of sum_y P(y|x) R(x, y) grad log P(y|x).
GradientVector exact_gradient(const Policy& policy, const Task& task,
                              std::uint64_t cap = kDefaultEnumerationCap);

OracleReport oracle_report(const Policy& policy, const Task& task,
                           std::uint64_t cap = kDefaultEnumerationCap);

// An estimator evaluated on a batch of groups at the current policy.
using EstimatorFn = std::function<GradientVector(std::span<const GroupBatch>, const Policy&)>;

EstimatorFn grpg_estimator();
EstimatorFn iw_grpg_estimator(const IwOptions& opts);

inline constexpr std::uint64_t kDefaultJointCap = 100'000;

// Exact expectation of `estimator` over every joint outcome of one group of
// `group_size` generations per prompt drawn from `behavior`, averaged over
// prompts. Throws CapacityError when outcomes^group_size exceeds `joint_cap`;
// callers fall back to Monte Carlo.
GradientVector estimator_expectation(const EstimatorFn& estimator, const Policy& policy,
                                     const Policy& behavior, const Task& task, int group_size,
                                     std::uint64_t joint_cap = kDefaultJointCap);

// Number of joint group outcomes estimator_expectation would visit for one prompt.
std::uint64_t joint_outcome_count(const Policy& behavior, const Task& task, int group_size);

struct MonteCarloEstimate {
  GradientVector mean;
  // Per-component standard error of the mean.
  GradientVector std_error;
  std::uint64_t groups = 0;
};

// Mean of `estimator` over `n_groups` independent groups drawn from
// `behavior`, one prompt per group cycling through the task's prompts.
MonteCarloEstimate monte_carlo_expectation(const EstimatorFn& estimator, const Policy& policy,
                                           const Policy& behavior, const Task& task,
                                           int group_size, std::uint64_t n_groups,
                                           std::uint64_t seed);

// Builds a behavior sample for `tokens`, scored under `behavior`.
Sample make_sample(const Policy& behavior, const Task& task, const Prompt& prompt,
                   TokenSeq tokens, int group_id = 0);

}  // namespace rapid
