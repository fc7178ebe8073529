#include "rapid/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "rapid/errors.hpp"

namespace rapid {

namespace {

std::size_t total_samples(std::span<const GroupBatch> groups) {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.size();
  return n;
}

GradientVector zero_gradient(const Policy& policy) {
  return GradientVector::Zero(static_cast<Eigen::Index>(policy.dimension()));
}

void accumulate(GradientVector& acc, const Policy& policy, const Sample& s, double coeff) {
  if (coeff == 0.0) return;
  acc += coeff * grad_sequence_logprob(policy, s.prompt, s.generation.tokens);
}

}  // namespace

void validate(const GroupBatch& group) {
  if (group.samples.empty()) throw DomainError("group batch is empty");
  const int id = group.samples.front().prompt.id;
  for (const auto& s : group.samples) {
    if (s.prompt.id != id) {
      throw DomainError("group mixes prompt ids " + std::to_string(id) + " and " +
                        std::to_string(s.prompt.id));
    }
  }
}

std::vector<GroupBatch> group_samples(std::span<const Sample> samples) {
  std::vector<GroupBatch> groups;
  std::map<int, std::size_t> slot;
  for (const auto& s : samples) {
    auto [it, inserted] = slot.try_emplace(s.group_id, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].samples.push_back(s);
  }
  return groups;
}

std::string to_string(ClipMode mode) {
  switch (mode) {
    case ClipMode::kCap: return "cap";
    case ClipMode::kFloor: return "floor";
    case ClipMode::kSymmetric: return "symmetric";
    case ClipMode::kOff: return "off";
  }
  return "?";
}

ClipMode parse_clip_mode(const std::string& name) {
  if (name == "cap") return ClipMode::kCap;
  if (name == "floor") return ClipMode::kFloor;
  if (name == "symmetric") return ClipMode::kSymmetric;
  if (name == "off") return ClipMode::kOff;
  throw ConfigError("unknown clip mode '" + name + "' (expected cap, floor, symmetric or off)");
}

void validate(const ClipConfig& cfg) {
  if (!(cfg.eta > 0.0)) throw ConfigError("clip eta must be positive");
  if (cfg.mode != ClipMode::kOff && cfg.eta < 1.0) {
    throw ConfigError("clip eta must be >= 1 unless clipping is off");
  }
}

double log_importance_weight(const Policy& policy, const Sample& sample) {
  const double lw =
      sequence_logprob(policy, sample.prompt, sample.generation.tokens) - sample.behavior_logprob;
  if (!std::isfinite(lw) || std::abs(lw) > kMaxAbsLogWeight) {
    throw DegenerateSampleError("importance log-weight " + std::to_string(lw) +
                                " for prompt " + std::to_string(sample.prompt.id) +
                                " is outside +/-" + std::to_string(kMaxAbsLogWeight));
  }
  return lw;
}

double importance_weight(const Policy& policy, const Sample& sample) {
  return std::exp(log_importance_weight(policy, sample));
}

ClippedWeight clip_weight(double w, const ClipConfig& cfg) {
  double v = w;
  switch (cfg.mode) {
    case ClipMode::kCap: v = std::min(w, cfg.eta); break;
    case ClipMode::kFloor: v = std::max(w, cfg.eta); break;
    case ClipMode::kSymmetric: v = std::clamp(w, 1.0 / cfg.eta, cfg.eta); break;
    case ClipMode::kOff: break;
  }
  return {v, v != w};
}

std::vector<double> single_path_advantages(std::span<const Sample> samples) {
  if (samples.empty()) throw ArityError("single-path advantages need at least one sample");
  double sum = 0.0;
  for (const auto& s : samples) sum += s.reward;
  const double baseline = sum / static_cast<double>(samples.size());
  std::vector<double> adv;
  adv.reserve(samples.size());
  for (const auto& s : samples) adv.push_back(s.reward - baseline);
  return adv;
}

std::vector<double> group_advantages(const GroupBatch& group) {
  validate(group);
  double sum = 0.0;
  for (const auto& s : group.samples) sum += s.reward;
  const double baseline = sum / static_cast<double>(group.size());
  std::vector<double> adv;
  adv.reserve(group.size());
  for (const auto& s : group.samples) adv.push_back(s.reward - baseline);
  return adv;
}

namespace {

std::vector<double> iw_advantages_from_weights(const GroupBatch& group,
                                               const std::vector<double>& clipped,
                                               bool leave_one_out) {
  const double n_k = static_cast<double>(group.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < group.size(); ++i) sum += clipped[i] * group.samples[i].reward;
  std::vector<double> adv;
  adv.reserve(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    double baseline_sum = sum;
    if (leave_one_out) {
      baseline_sum = 0.0;
      for (std::size_t j = 0; j < group.size(); ++j) {
        if (j != i) baseline_sum += clipped[j] * group.samples[j].reward;
      }
    }
    adv.push_back(group.samples[i].reward - baseline_sum / n_k);
  }
  return adv;
}

}  // namespace

std::vector<double> iw_group_advantages(const GroupBatch& group, const Policy& policy,
                                        const ClipConfig& cfg, bool leave_one_out) {
  validate(group);
  std::vector<double> clipped;
  clipped.reserve(group.size());
  for (const auto& s : group.samples) {
    clipped.push_back(clip_weight(importance_weight(policy, s), cfg).value);
  }
  return iw_advantages_from_weights(group, clipped, leave_one_out);
}

GradientVector grpg_gradient(std::span<const GroupBatch> groups, const Policy& policy) {
  GradientVector grad = zero_gradient(policy);
  const std::size_t n = total_samples(groups);
  if (n == 0) return grad;
  for (const auto& group : groups) {
    const auto adv = group_advantages(group);
    for (std::size_t i = 0; i < group.size(); ++i) accumulate(grad, policy, group.samples[i], adv[i]);
  }
  return grad / static_cast<double>(n);
}

GradientVector iw_grpg_gradient(std::span<const GroupBatch> groups, const Policy& policy,
                                const IwOptions& opts) {
  if (!opts.importance_weighting) return grpg_gradient(groups, policy);
  validate(opts.clip);
  GradientVector grad = zero_gradient(policy);
  const std::size_t n = total_samples(groups);
  if (n == 0) return grad;
  std::vector<double> raw;
  std::vector<double> clipped;
  for (const auto& group : groups) {
    validate(group);
    raw.clear();
    clipped.clear();
    for (const auto& s : group.samples) {
      const double w = importance_weight(policy, s);
      raw.push_back(w);
      clipped.push_back(clip_weight(w, opts.clip).value);
    }
    const auto adv = iw_advantages_from_weights(group, clipped, opts.leave_one_out);
    for (std::size_t i = 0; i < group.size(); ++i) {
      const double lead = opts.clip_leading ? clipped[i] : raw[i];
      accumulate(grad, policy, group.samples[i], lead * adv[i]);
    }
  }
  return grad / static_cast<double>(n);
}

GradientVector kl_penalty_gradient(std::span<const GroupBatch> groups, const Policy& policy,
                                   const Policy& reference) {
  GradientVector grad = zero_gradient(policy);
  const std::size_t n = total_samples(groups);
  if (n == 0) return grad;
  for (const auto& group : groups) {
    for (const auto& s : group.samples) {
      const double log_ratio = sequence_logprob(reference, s.prompt, s.generation.tokens) -
                               sequence_logprob(policy, s.prompt, s.generation.tokens);
      // d/dtheta (r - ln r - 1) with r = exp(log_ratio) is (1 - r) grad log pi.
      accumulate(grad, policy, s, 1.0 - std::exp(log_ratio));
    }
  }
  return grad / static_cast<double>(n);
}

GradientVector kl_regularized_gradient(std::span<const GroupBatch> groups, const Policy& policy,
                                       const Policy& reference, double beta) {
  GradientVector grad = grpg_gradient(groups, policy);
  if (beta == 0.0) return grad;
  return grad - beta * kl_penalty_gradient(groups, policy, reference);
}

}  // namespace rapid
