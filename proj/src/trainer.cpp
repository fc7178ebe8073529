#include "rapid/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "rapid/errors.hpp"
#include "rapid/oracle.hpp"

namespace rapid {

namespace {

// Stream tags mixed into derive_seed so the rng roles never collide.
constexpr std::uint64_t kPromptStream = 0x50524f4dULL;
constexpr std::uint64_t kMinibatchStream = 0x4d494e49ULL;

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kRapid: return "rapid";
    case Algorithm::kGrpgOnPolicy: return "grpg_onpolicy";
    case Algorithm::kGrpoKl: return "grpo_kl";
  }
  return "?";
}

Algorithm parse_algorithm(const std::string& name) {
  if (name == "rapid") return Algorithm::kRapid;
  if (name == "grpg_onpolicy" || name == "grpg") return Algorithm::kGrpgOnPolicy;
  if (name == "grpo_kl" || name == "grpo") return Algorithm::kGrpoKl;
  throw ConfigError("unknown algorithm '" + name + "' (expected rapid, grpg_onpolicy or grpo_kl)");
}

std::string to_string(Optimizer o) { return o == Optimizer::kSgd ? "sgd" : "momentum"; }

Optimizer parse_optimizer(const std::string& name) {
  if (name == "sgd") return Optimizer::kSgd;
  if (name == "momentum") return Optimizer::kMomentum;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or momentum)");
}

std::string to_string(MinibatchOrder m) {
  return m == MinibatchOrder::kIterate ? "iterate" : "resample";
}

MinibatchOrder parse_minibatch_order(const std::string& name) {
  if (name == "iterate") return MinibatchOrder::kIterate;
  if (name == "resample") return MinibatchOrder::kResample;
  throw ConfigError("unknown minibatch order '" + name + "' (expected iterate or resample)");
}

void validate(const TrainConfig& c) {
  require(c.n_inference > 0, "N_inference must be positive");
  require(c.n_group > 0, "N_group must be positive");
  require(c.n_step > 0, "N_step must be positive");
  require(c.outer_steps > 0, "T (outer_steps) must be positive");
  require(c.n_inference % c.n_group == 0, "N_group must divide N_inference");
  require(c.n_inference % c.n_step == 0, "N_step must divide N_inference");
  require(c.n_step % c.n_group == 0,
          "N_step must be a multiple of N_group (mini-batches hold whole groups)");
  require(c.learning_rate > 0.0, "learning_rate must be positive");
  require(c.momentum >= 0.0 && c.momentum < 1.0, "momentum must lie in [0, 1)");
  require(c.beta_kl >= 0.0, "beta_kl must be non-negative");
  require(c.workers >= 1, "workers must be at least 1");
  require(c.oracle_every >= 0, "oracle_every must be non-negative");
  validate(c.clip);
  validate(c.cost);
}

TrainerState::TrainerState(const Policy& initial)
    : policy(initial),
      behavior(initial),
      velocity(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(initial.dimension()))) {}

TrainerState apply_update(TrainerState state, const GradientVector& gradient,
                          const TrainConfig& config) {
  if (gradient.size() != state.policy.theta().size()) {
    throw LengthError("gradient length does not match parameter dimension");
  }
  if (!gradient.allFinite()) throw NumericError("non-finite gradient");
  Eigen::VectorXd theta = state.policy.theta();
  if (config.optimizer == Optimizer::kMomentum) {
    state.velocity = config.momentum * state.velocity + gradient;
    theta += config.learning_rate * state.velocity;
  } else {
    theta += config.learning_rate * gradient;
  }
  if (!theta.allFinite()) throw NumericError("non-finite parameters after update");
  state.policy.set_theta(std::move(theta));
  return state;
}

std::vector<Sample> sample_phase(const Policy& policy, const Task& task,
                                 const std::vector<Prompt>& prompts, int n_group,
                                 std::uint64_t seed, int outer_step, int workers) {
  std::vector<Sample> samples(prompts.size() * static_cast<std::size_t>(n_group));
  auto fill = [&](std::size_t p) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(outer_step), p));
    for (int i = 0; i < n_group; ++i) {
      Sample& s = samples[p * static_cast<std::size_t>(n_group) + static_cast<std::size_t>(i)];
      s.prompt = prompts[p];
      s.generation = sample_generation(policy, prompts[p], rng);
      s.behavior_logprob = s.generation.total_logprob();
      s.reward = reward(task, prompts[p], s.generation.tokens);
      s.group_id = static_cast<int>(p);
    }
  };
  const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)),
                                               prompts.size());
  if (n_workers <= 1) {
    for (std::size_t p = 0; p < prompts.size(); ++p) fill(p);
    return samples;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < n_workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t p = w; p < prompts.size(); p += n_workers) fill(p);
    });
  }
  pool.clear();
  return samples;
}

namespace {

// Epoch-style prompt iterator: a fresh seeded shuffle of X every pass.
class PromptCursor {
 public:
  PromptCursor(const Task& task, std::uint64_t seed) : task_(task), seed_(seed) { reshuffle(); }

  std::vector<Prompt> take(int count) {
    std::vector<Prompt> out;
    out.reserve(static_cast<std::size_t>(count));
    while (static_cast<int>(out.size()) < count) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(task_.prompts[order_[pos_++]]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(task_.prompts.size());
    std::iota(order_.begin(), order_.end(), 0);
    Rng rng(derive_seed(seed_, kPromptStream, epoch_++));
    std::shuffle(order_.begin(), order_.end(), rng);
    pos_ = 0;
  }

  const Task& task_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::uint64_t epoch_ = 0;
};

std::vector<Sample> flatten(const std::vector<GroupBatch>& groups) {
  std::vector<Sample> out;
  for (const auto& g : groups) out.insert(out.end(), g.samples.begin(), g.samples.end());
  return out;
}

TrainResult run_loop(const TrainConfig& config, const Task& task, const Policy& initial,
                     const StepHook& hook) {
  validate(config);
  if (task.prompts.empty()) throw ConfigError("task has no prompts");
  if (initial.vocab().size != task.vocab.size || initial.max_len() != task.max_len) {
    throw ConfigError("initial policy does not match the task vocabulary or max_len");
  }

  TrainResult result{initial, {}, std::nullopt, {}};
  if (config.oracle_every > 0) result.initial_oracle_J = exact_objective(initial, task);

  TrainerState state(initial);
  PromptCursor cursor(task, config.seed);
  const int h_steps = config.batch_size_ratio();
  const int groups_per_prompt_batch = config.n_inference / config.n_group;
  const auto groups_per_step = static_cast<std::size_t>(config.groups_per_step());
  const IwOptions iw{config.clip, config.leave_one_out, config.clip_leading,
                     config.importance_weighting};
  const int total_steps = config.outer_steps * h_steps;
  double cumulative_cost = 0.0;
  double cumulative_inference = 0.0;

  for (int t = 1; t <= config.outer_steps; ++t) {
    const auto prompts = cursor.take(groups_per_prompt_batch);
    const auto samples =
        sample_phase(state.policy, task, prompts, config.n_group, config.seed, t, config.workers);
    state.generations += static_cast<std::int64_t>(samples.size());
    state.behavior = state.policy;
    ++state.snapshots;
    state.outer_step = t;

    const auto groups = group_samples(samples);
    std::vector<std::size_t> order(groups.size());
    std::iota(order.begin(), order.end(), 0);
    Rng mb_rng(derive_seed(config.seed, kMinibatchStream, static_cast<std::uint64_t>(t)));
    std::shuffle(order.begin(), order.end(), mb_rng);
    std::uniform_int_distribution<std::size_t> pick(0, groups.size() - 1);

    const PhaseCost inference = simulated_phase_cost(
        config.cost, PhaseShape{1, static_cast<std::int64_t>(samples.size()), 0, 0});

    for (int h = 1; h <= h_steps; ++h) {
      std::vector<GroupBatch> batch;
      batch.reserve(groups_per_step);
      for (std::size_t g = 0; g < groups_per_step; ++g) {
        if (config.minibatch == MinibatchOrder::kIterate) {
          batch.push_back(groups[order[static_cast<std::size_t>(h - 1) * groups_per_step + g]]);
        } else {
          batch.push_back(groups[pick(mb_rng)]);
        }
      }
      const auto flat = flatten(batch);

      MetricsRecord rec;
      rec.outer_step = t;
      rec.inner_step = h;
      rec.global_step = state.global_step + 1;
      double reward_sum = 0.0, length_sum = 0.0;
      for (const auto& s : flat) {
        reward_sum += s.reward;
        length_sum += static_cast<double>(s.generation.tokens.size());
      }
      rec.mean_reward = reward_sum / static_cast<double>(flat.size());
      rec.mean_length = length_sum / static_cast<double>(flat.size());
      GradientVector grad;
      try {
        rec.staleness = staleness(flat, state.policy, config.clip);
        rec.staleness_signed = signed_staleness(flat, state.policy, config.clip);
        rec.staleness_raw =
            staleness(flat, state.policy, ClipConfig{config.clip.eta, ClipMode::kOff});
        rec.clip_fraction = clip_fraction(flat, state.policy, config.clip);

        switch (config.algorithm) {
          case Algorithm::kRapid: grad = iw_grpg_gradient(batch, state.policy, iw); break;
          case Algorithm::kGrpgOnPolicy: grad = grpg_gradient(batch, state.policy); break;
          case Algorithm::kGrpoKl:
            grad = kl_regularized_gradient(batch, state.policy, state.behavior, config.beta_kl);
            rec.beta_kl = config.beta_kl;
            break;
        }
        state = apply_update(std::move(state), grad, config);
      } catch (const NumericError& e) {
        throw TrainingAborted(std::string(e.what()) + " at gradient step " +
                                  std::to_string(rec.global_step),
                              rec.global_step, flat);
      }
      state.inner_step = h;
      ++state.global_step;

      rec.grad_norm = grad.norm();
      const PhaseCost backprop = simulated_phase_cost(
          config.cost, PhaseShape{0, 0, 1, static_cast<std::int64_t>(flat.size())});
      rec.step_cost = backprop.total() + (h == 1 ? inference.total() : 0.0);
      if (h == 1) cumulative_inference += inference.inference;
      cumulative_cost += rec.step_cost;
      rec.cumulative_cost = cumulative_cost;
      rec.cumulative_inference_cost = cumulative_inference;
      rec.generations = state.generations;
      rec.snapshots = state.snapshots;
      if (config.oracle_every > 0 &&
          (state.global_step % config.oracle_every == 0 || state.global_step == total_steps)) {
        rec.oracle_J = exact_objective(state.policy, task);
      }
      result.records.push_back(rec);
      if (state.global_step == total_steps) result.final_batch = flat;
      if (hook) hook(state, rec);
    }
  }
  result.policy = state.policy;
  return result;
}

}  // namespace

TrainResult run_rapid(const TrainConfig& config, const Task& task, const Policy& initial,
                      const StepHook& hook) {
  TrainConfig c = config;
  c.algorithm = Algorithm::kRapid;
  return run_loop(c, task, initial, hook);
}

TrainResult run_onpolicy_grpg(const TrainConfig& config, const Task& task, const Policy& initial,
                              const StepHook& hook) {
  TrainConfig c = config;
  c.algorithm = Algorithm::kGrpgOnPolicy;
  c.n_inference = c.n_step;
  return run_loop(c, task, initial, hook);
}

TrainResult run_grpo_kl(const TrainConfig& config, const Task& task, const Policy& initial,
                        const StepHook& hook) {
  TrainConfig c = config;
  c.algorithm = Algorithm::kGrpoKl;
  return run_loop(c, task, initial, hook);
}

TrainResult run_training(const TrainConfig& config, const Task& task, const Policy& initial,
                         const StepHook& hook) {
  switch (config.algorithm) {
    case Algorithm::kRapid: return run_rapid(config, task, initial, hook);
    case Algorithm::kGrpgOnPolicy: return run_onpolicy_grpg(config, task, initial, hook);
    case Algorithm::kGrpoKl: return run_grpo_kl(config, task, initial, hook);
  }
  throw ConfigError("unknown algorithm");
}

}  // namespace rapid
