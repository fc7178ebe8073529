#include "rapid/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rapid/errors.hpp"

namespace rapid {

double exact_value(const Policy& policy, const Task& task, const Prompt& prompt,
                   std::uint64_t cap) {
  double v = 0.0;
  for (const auto& out : enumerate_outputs(policy, prompt, cap)) {
    v += out.probability * reward(task, prompt, out.tokens);
  }
  return v;
}

OracleReport oracle_report(const Policy& policy, const Task& task, std::uint64_t cap) {
  if (task.prompts.empty()) throw ArityError("task has no prompts");
  OracleReport report;
  report.exact_gradient = GradientVector::Zero(static_cast<Eigen::Index>(policy.dimension()));
  for (const auto& prompt : task.prompts) {
    double v = 0.0;
    for (const auto& out : enumerate_outputs(policy, prompt, cap)) {
      const double r = reward(task, prompt, out.tokens);
      v += out.probability * r;
      ++report.outcome_count;
      if (r != 0.0) {
        report.exact_gradient +=
            (out.probability * r) * grad_sequence_logprob(policy, prompt, out.tokens);
      }
    }
    report.values[prompt.id] = v;
    report.exact_J += v;
  }
  const auto n = static_cast<double>(task.prompts.size());
  report.exact_J /= n;
  report.exact_gradient /= n;
  return report;
}

double exact_objective(const Policy& policy, const Task& task, std::uint64_t cap) {
  if (task.prompts.empty()) throw ArityError("task has no prompts");
  double total = 0.0;
  for (const auto& prompt : task.prompts) total += exact_value(policy, task, prompt, cap);
  return total / static_cast<double>(task.prompts.size());
}

GradientVector exact_gradient(const Policy& policy, const Task& task, std::uint64_t cap) {
  return oracle_report(policy, task, cap).exact_gradient;
}

EstimatorFn grpg_estimator() {
  return [](std::span<const GroupBatch> groups, const Policy& policy) {
    return grpg_gradient(groups, policy);
  };
}

EstimatorFn iw_grpg_estimator(const IwOptions& opts) {
  return [opts](std::span<const GroupBatch> groups, const Policy& policy) {
    return iw_grpg_gradient(groups, policy, opts);
  };
}

Sample make_sample(const Policy& behavior, const Task& task, const Prompt& prompt,
                   TokenSeq tokens, int group_id) {
  Sample s;
  s.prompt = prompt;
  s.generation.logprobs = token_logprobs(behavior, prompt, tokens);
  s.generation.tokens = std::move(tokens);
  s.behavior_logprob = s.generation.total_logprob();
  s.reward = reward(task, prompt, s.generation.tokens);
  s.group_id = group_id;
  return s;
}

namespace {

std::uint64_t checked_power(std::uint64_t base, int exp, std::uint64_t cap) {
  std::uint64_t out = 1;
  for (int i = 0; i < exp; ++i) {
    if (base != 0 && out > cap / base) return std::numeric_limits<std::uint64_t>::max();
    out *= base;
  }
  return out;
}

}  // namespace

std::uint64_t joint_outcome_count(const Policy& behavior, const Task& task, int group_size) {
  std::uint64_t worst = 0;
  for (const auto& prompt : task.prompts) {
    const auto outcomes = enumerate_outputs(behavior, prompt).size();
    worst = std::max(worst, checked_power(outcomes, group_size,
                                          std::numeric_limits<std::uint64_t>::max()));
  }
  return worst;
}

GradientVector estimator_expectation(const EstimatorFn& estimator, const Policy& policy,
                                     const Policy& behavior, const Task& task, int group_size,
                                     std::uint64_t joint_cap) {
  if (group_size < 1) throw ArityError("group size must be positive");
  if (task.prompts.empty()) throw ArityError("task has no prompts");
  GradientVector total = GradientVector::Zero(static_cast<Eigen::Index>(policy.dimension()));
  for (const auto& prompt : task.prompts) {
    const auto outputs = enumerate_outputs(behavior, prompt);
    const std::uint64_t joint = checked_power(outputs.size(), group_size, joint_cap);
    if (joint > joint_cap) {
      throw CapacityError("joint group enumeration of " + std::to_string(outputs.size()) + "^" +
                          std::to_string(group_size) + " outcomes exceeds cap " +
                          std::to_string(joint_cap) + "; use a Monte Carlo estimate instead");
    }
    std::vector<Sample> candidates;
    candidates.reserve(outputs.size());
    for (const auto& out : outputs) candidates.push_back(make_sample(behavior, task, prompt, out.tokens));

    // Mixed-radix counter over (outcome of member 0, ..., outcome of member G-1).
    std::vector<std::size_t> digit(static_cast<std::size_t>(group_size), 0);
    GroupBatch group;
    group.samples.resize(static_cast<std::size_t>(group_size));
    GradientVector per_prompt = GradientVector::Zero(total.size());
    for (std::uint64_t k = 0; k < joint; ++k) {
      double prob = 1.0;
      for (std::size_t m = 0; m < digit.size(); ++m) {
        group.samples[m] = candidates[digit[m]];
        prob *= outputs[digit[m]].probability;
      }
      per_prompt += prob * estimator(std::span<const GroupBatch>(&group, 1), policy);
      for (std::size_t m = 0; m < digit.size(); ++m) {
        if (++digit[m] < outputs.size()) break;
        digit[m] = 0;
      }
    }
    total += per_prompt;
  }
  return total / static_cast<double>(task.prompts.size());
}

MonteCarloEstimate monte_carlo_expectation(const EstimatorFn& estimator, const Policy& policy,
                                           const Policy& behavior, const Task& task,
                                           int group_size, std::uint64_t n_groups,
                                           std::uint64_t seed) {
  if (group_size < 1 || n_groups < 2) throw ArityError("need group_size >= 1 and n_groups >= 2");
  if (task.prompts.empty()) throw ArityError("task has no prompts");
  const auto dim = static_cast<Eigen::Index>(policy.dimension());
  GradientVector sum = GradientVector::Zero(dim);
  GradientVector sum_sq = GradientVector::Zero(dim);
  Rng rng(seed);
  GroupBatch group;
  for (std::uint64_t k = 0; k < n_groups; ++k) {
    const Prompt& prompt = task.prompts[k % task.prompts.size()];
    group.samples.clear();
    for (int i = 0; i < group_size; ++i) {
      Sample s;
      s.prompt = prompt;
      s.generation = sample_generation(behavior, prompt, rng);
      s.behavior_logprob = s.generation.total_logprob();
      s.reward = reward(task, prompt, s.generation.tokens);
      group.samples.push_back(std::move(s));
    }
    const GradientVector g = estimator(std::span<const GroupBatch>(&group, 1), policy);
    sum += g;
    sum_sq += g.cwiseProduct(g);
  }
  const auto n = static_cast<double>(n_groups);
  MonteCarloEstimate est;
  est.groups = n_groups;
  est.mean = sum / n;
  const GradientVector var =
      ((sum_sq / n - est.mean.cwiseProduct(est.mean)) * (n / (n - 1.0))).cwiseMax(0.0);
  est.std_error = (var / n).cwiseSqrt();
  return est;
}

}  // namespace rapid
