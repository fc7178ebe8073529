#pragma once

#include <span>
#include <string>
#include <vector>

#include "rapid/policy.hpp"
#include "rapid/types.hpp"

namespace rapid {

// One (prompt, generation) pair drawn from the behavior policy mu.
struct Sample {
  Prompt prompt;
  Generation generation;
  double reward = 0.0;
  // log mu(y | x), the sum of generation.logprobs at sampling time.
  double behavior_logprob = 0.0;
  int group_id = 0;
};

// Samples sharing one prompt; the unit of advantage estimation.
struct GroupBatch {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

// Throws DomainError unless the group is non-empty and shares one prompt id.
void validate(const GroupBatch& group);

// Splits samples into groups by group_id, in order of first appearance.
std::vector<GroupBatch> group_samples(std::span<const Sample> samples);

enum class ClipMode { kCap, kFloor, kSymmetric, kOff };

std::string to_string(ClipMode mode);
ClipMode parse_clip_mode(const std::string& name);

struct ClipConfig {
  double eta = 2.0;
  ClipMode mode = ClipMode::kCap;
};

void validate(const ClipConfig& cfg);

struct ClippedWeight {
  double value = 1.0;
  bool clipped = false;
};

// Log-weights beyond this magnitude are treated as a broken off-policy setup.
inline constexpr double kMaxAbsLogWeight = 50.0;

// ln(pi_theta(y|x) / mu(y|x)), checked against kMaxAbsLogWeight.
double log_importance_weight(const Policy& policy, const Sample& sample);

double importance_weight(const Policy& policy, const Sample& sample);

// cap: min(w, eta); floor: max(w, eta); symmetric: clamp to [1/eta, eta].
ClippedWeight clip_weight(double w, const ClipConfig& cfg);

// R_n minus the mean reward of the whole batch.
std::vector<double> single_path_advantages(std::span<const Sample> samples);

// R_n minus the mean reward of the group.
std::vector<double> group_advantages(const GroupBatch& group);

// R_n - (1/N_k) sum_{n' in S} clip(w_n') R_n', with S the whole group or the
// group without n. The divisor is N_k either way.
std::vector<double> iw_group_advantages(const GroupBatch& group, const Policy& policy,
                                        const ClipConfig& cfg, bool leave_one_out);

// On-policy group-relative policy gradient, averaged over all samples.
GradientVector grpg_gradient(std::span<const GroupBatch> groups, const Policy& policy);

struct IwOptions {
  ClipConfig clip;
  bool leave_one_out = false;
  // Apply the clip to the leading pi/mu factor as well as the baseline weights.
  bool clip_leading = true;
  // When false the estimator ignores mu entirely and reduces to grpg_gradient.
  bool importance_weighting = true;
};

// Importance-weighted group-relative policy gradient:
// (1/N) sum_n w_n grad log pi(y_n) A_n with A_n from iw_group_advantages.
GradientVector iw_grpg_gradient(std::span<const GroupBatch> groups, const Policy& policy,
                                const IwOptions& opts);

// Gradient of the batch mean of the sequence-level k3 estimate
// KL(pi || ref) ~ r - ln r - 1, r = ref(y)/pi(y), holding samples fixed.
GradientVector kl_penalty_gradient(std::span<const GroupBatch> groups, const Policy& policy,
                                   const Policy& reference);

// grpg_gradient - beta * kl_penalty_gradient.
GradientVector kl_regularized_gradient(std::span<const GroupBatch> groups, const Policy& policy,
                                       const Policy& reference, double beta);

inline constexpr double kDefaultKlBeta = 0.04;

}  // namespace rapid
