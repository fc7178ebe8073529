#include "rapid/verify.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "rapid/errors.hpp"

namespace rapid {

VerifyLevel parse_verify_level(const std::string& name) {
  if (name == "quick") return VerifyLevel::kQuick;
  if (name == "full") return VerifyLevel::kFull;
  throw ConfigError("unknown verify level '" + name + "' (expected quick or full)");
}

nlohmann::json to_json(const CheckResult& c) {
  return {{"name", c.name},           {"passed", c.passed},   {"max_deviation", c.max_deviation},
          {"tolerance", c.tolerance}, {"detail", c.detail},   {"instance", c.instance}};
}

namespace {

struct Instance {
  std::string label;
  Task task;
  Policy policy;
  Policy behavior;
};

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

nlohmann::json describe(const Instance& inst, int group_size) {
  return {{"label", inst.label},
          {"task", inst.task.name},
          {"vocab", inst.task.vocab.size},
          {"eos", inst.task.vocab.eos ? nlohmann::json(*inst.task.vocab.eos) : nlohmann::json()},
          {"max_len", inst.task.max_len},
          {"prompts", inst.task.prompts.size()},
          {"features", inst.policy.features().name()},
          {"theta", to_vec(inst.policy.theta())},
          {"behavior_theta", to_vec(inst.behavior.theta())},
          {"group_size", group_size}};
}

Eigen::VectorXd random_theta(std::size_t dim, double scale, Rng& rng) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = n(rng);
  return v;
}

// Two-armed bandit with mu uniform and pi(A) = 0.6.
Instance reference_bandit() {
  Task task = builtin_task("Bandit", TaskParams{.vocab = 2});
  Policy mu = make_policy(task);
  Eigen::VectorXd theta(2);
  theta << std::log(1.5), 0.0;
  return {"bandit pi(A)=0.6 mu uniform", task, mu.with_theta(theta), mu};
}

// Three-armed bandit far enough off-policy that weights span 0.1 to 4.
Instance skewed_bandit() {
  Task task = builtin_task("Bandit", TaskParams{.vocab = 3});
  Policy base = make_policy(task);
  Eigen::VectorXd pi(3), mu(3);
  pi << std::log(0.8), std::log(0.15), std::log(0.05);
  mu << std::log(0.2), std::log(0.3), std::log(0.5);
  return {"bandit vocab 3 pi=(0.8,0.15,0.05) mu=(0.2,0.3,0.5)", task, base.with_theta(pi),
          base.with_theta(mu)};
}

std::vector<Instance> enumeration_instances() {
  Rng rng(20240601);
  std::vector<Instance> out;
  out.push_back(reference_bandit());
  {
    Task task = builtin_task("Bandit", TaskParams{.vocab = 3});
    Policy base = make_policy(task);
    out.push_back({"bandit vocab 3 random", task,
                   base.with_theta(random_theta(base.dimension(), 1.0, rng)),
                   base.with_theta(random_theta(base.dimension(), 1.0, rng))});
  }
  {
    Task task = builtin_task("LastTokenMatch",
                             TaskParams{.vocab = 2, .prompts = 2, .max_len = 2, .seed = 7});
    Policy base = make_policy(task);
    out.push_back({"LastTokenMatch vocab 2 len 2", task,
                   base.with_theta(random_theta(base.dimension(), 0.7, rng)),
                   base.with_theta(random_theta(base.dimension(), 0.7, rng))});
  }
  {
    Task task = builtin_task("LastTokenMatch",
                             TaskParams{.vocab = 2, .prompts = 2, .max_len = 3, .seed = 11});
    task.vocab.eos = 1;
    Policy base = make_policy(task);
    out.push_back({"LastTokenMatch vocab 2 len 3 eos", task,
                   base.with_theta(random_theta(base.dimension(), 0.7, rng)),
                   base.with_theta(random_theta(base.dimension(), 0.7, rng))});
  }
  {
    Task task = builtin_task("Parity", TaskParams{.bits = 2});
    Policy base = make_policy(task);
    out.push_back({"Parity 2 bits", task,
                   base.with_theta(random_theta(base.dimension(), 1.0, rng)),
                   base.with_theta(random_theta(base.dimension(), 1.0, rng))});
  }
  return out;
}

double max_abs(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

CheckResult make_check(std::string name, double deviation, double tol, nlohmann::json instance,
                       std::string detail = {}) {
  CheckResult c;
  c.name = std::move(name);
  c.max_deviation = deviation;
  c.tolerance = tol;
  c.passed = std::isfinite(deviation) && deviation <= tol;
  c.instance = std::move(instance);
  c.detail = std::move(detail);
  return c;
}

// Worst result over instances; the instance recorded is the worst one.
class Worst {
 public:
  void observe(double dev, nlohmann::json inst) {
    const double d = std::isfinite(dev) ? dev : std::numeric_limits<double>::infinity();
    if (instance_.is_null() || d > dev_) {
      dev_ = d;
      instance_ = std::move(inst);
    }
  }
  CheckResult result(std::string name, double tol, std::string detail = {}) const {
    return make_check(std::move(name), dev_, tol, instance_, std::move(detail));
  }

 private:
  double dev_ = 0.0;
  nlohmann::json instance_;
};

void check_unbiased(const std::vector<Instance>& instances, const VerifyHooks& hooks,
                    std::vector<CheckResult>& out) {
  const IwOptions loo{ClipConfig{1.0, ClipMode::kOff}, true, true, true};
  Worst off_policy;
  Worst on_policy;
  Worst full_group_scale;
  for (const auto& inst : instances) {
    const GradientVector oracle = exact_gradient(inst.policy, inst.task);
    const GradientVector oracle_mu = exact_gradient(inst.behavior, inst.task);
    for (int g : {2, 3}) {
      const GradientVector e =
          estimator_expectation(hooks.iw_grpg(loo), inst.policy, inst.behavior, inst.task, g);
      off_policy.observe(max_abs(e - oracle), describe(inst, g));

      const GradientVector on =
          estimator_expectation(hooks.iw_grpg(loo), inst.behavior, inst.behavior, inst.task, g);
      on_policy.observe(max_abs(on - oracle_mu), describe(inst, g));

      // Plain group advantages include the sample in its own baseline, so the
      // on-policy expectation is (1 - 1/N) grad J.
      const GradientVector grpg =
          estimator_expectation(hooks.grpg, inst.behavior, inst.behavior, inst.task, g);
      full_group_scale.observe(max_abs(grpg - (1.0 - 1.0 / g) * oracle_mu), describe(inst, g));
    }
  }
  out.push_back(off_policy.result("loo_iw_grpg_unbiased_off_policy", 1e-8,
                                  "E_mu[leave-one-out IW-GRPG] vs exact gradient, N in {2,3}"));
  out.push_back(on_policy.result("loo_grpg_unbiased_on_policy", 1e-8,
                                 "mu = pi, leave-one-out, vs exact gradient"));
  out.push_back(full_group_scale.result("grpg_full_group_expectation", 1e-8,
                                        "E[GRPG] = (1 - 1/N) exact gradient on-policy"));
}

void check_identities(const std::vector<Instance>& instances, std::vector<CheckResult>& out) {
  Worst score;
  Worst weight_mean;
  Worst prob_sum;
  for (const auto& inst : instances) {
    for (const auto& prompt : inst.task.prompts) {
      GradientVector s = GradientVector::Zero(static_cast<Eigen::Index>(inst.policy.dimension()));
      double total = 0.0;
      double w_mean = 0.0;
      for (const auto& o : enumerate_outputs(inst.behavior, prompt)) {
        s += o.probability * grad_sequence_logprob(inst.behavior, prompt, o.tokens);
        total += o.probability;
        const Sample smp = make_sample(inst.behavior, inst.task, prompt, o.tokens);
        w_mean += o.probability * importance_weight(inst.policy, smp);
      }
      score.observe(max_abs(s), describe(inst, 1));
      prob_sum.observe(std::abs(total - 1.0), describe(inst, 1));
      weight_mean.observe(std::abs(w_mean - 1.0), describe(inst, 1));
    }
  }
  out.push_back(score.result("score_identity", 1e-10, "sum_y P(y) grad log P(y) = 0"));
  out.push_back(prob_sum.result("enumeration_total_probability", 1e-9));
  out.push_back(weight_mean.result("importance_weight_mean_one", 1e-9, "E_mu[pi/mu] = 1"));
}

void check_finite_differences(const std::vector<Instance>& instances,
                              std::vector<CheckResult>& out) {
  constexpr double kStep = 1e-5;
  Rng rng(99);
  Worst seq;
  Worst objective;
  for (const auto& inst : instances) {
    const auto dim = inst.policy.dimension();
    Eigen::VectorXd dir = random_theta(dim, 1.0, rng);
    dir.normalize();
    const Policy plus = inst.policy.with_theta(inst.policy.theta() + kStep * dir);
    const Policy minus = inst.policy.with_theta(inst.policy.theta() - kStep * dir);
    for (const auto& prompt : inst.task.prompts) {
      for (const auto& o : enumerate_outputs(inst.policy, prompt)) {
        const double fd = (sequence_logprob(plus, prompt, o.tokens) -
                           sequence_logprob(minus, prompt, o.tokens)) /
                          (2 * kStep);
        const double an = grad_sequence_logprob(inst.policy, prompt, o.tokens).dot(dir);
        seq.observe(std::abs(fd - an) / std::max(std::abs(an), 1e-2), describe(inst, 1));
      }
    }
    // Component-wise finite differences of the exact objective.
    const GradientVector g = exact_gradient(inst.policy, inst.task);
    GradientVector fd(g.size());
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(g.size());
      e[i] = kStep;
      fd[i] = (exact_objective(inst.policy.with_theta(inst.policy.theta() + e), inst.task) -
               exact_objective(inst.policy.with_theta(inst.policy.theta() - e), inst.task)) /
              (2 * kStep);
    }
    objective.observe((fd - g).norm() / std::max(g.norm(), 1e-12), describe(inst, 1));
  }
  out.push_back(seq.result("finite_difference_sequence_logprob", 1e-6,
                           "directional central difference, step 1e-5"));
  out.push_back(objective.result("finite_difference_exact_objective", 1e-7,
                                 "relative L2 of central differences of J"));
}

void check_onpolicy_reduction(const std::vector<Instance>& instances, const VerifyHooks& hooks,
                              std::vector<CheckResult>& out) {
  const IwOptions off{ClipConfig{1.0, ClipMode::kOff}, false, true, true};
  Worst worst;
  Rng rng(5);
  for (const auto& inst : instances) {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<GroupBatch> groups;
      for (std::size_t p = 0; p < inst.task.prompts.size(); ++p) {
        GroupBatch g;
        for (int i = 0; i < 4; ++i) {
          const auto gen = sample_generation(inst.policy, inst.task.prompts[p], rng);
          g.samples.push_back(make_sample(inst.policy, inst.task, inst.task.prompts[p], gen.tokens,
                                          static_cast<int>(p)));
        }
        groups.push_back(std::move(g));
      }
      const GradientVector a = hooks.iw_grpg(off)(groups, inst.policy);
      const GradientVector b = hooks.grpg(groups, inst.policy);
      worst.observe(max_abs(a - b), describe(inst, 4));
    }
  }
  out.push_back(worst.result("onpolicy_reduction", 1e-12, "mu = pi, clipping off: IW-GRPG = GRPG"));
}

void check_self_inclusion_bias(const VerifyHooks& hooks, std::vector<CheckResult>& out) {
  const Instance inst = reference_bandit();
  const GradientVector oracle = exact_gradient(inst.policy, inst.task);
  const IwOptions full{ClipConfig{1.0, ClipMode::kOff}, false, true, true};
  const double b2 =
      (estimator_expectation(hooks.iw_grpg(full), inst.policy, inst.behavior, inst.task, 2) - oracle)
          .norm();
  const double b3 =
      (estimator_expectation(hooks.iw_grpg(full), inst.policy, inst.behavior, inst.task, 3) - oracle)
          .norm();
  CheckResult c = make_check("self_inclusion_bias_shrinks", b3 - b2, 0.0, describe(inst, 3),
                             "bias norm N=2: " + std::to_string(b2) + ", N=3: " + std::to_string(b3));
  c.passed = b3 < b2 && b2 > 0.0;
  out.push_back(std::move(c));
}

void check_clipping_bias(const VerifyHooks& hooks, std::vector<CheckResult>& out) {
  const Instance inst = skewed_bandit();
  const GradientVector oracle = exact_gradient(inst.policy, inst.task);
  constexpr int kGroup = 3;
  std::string detail;
  double prev = std::numeric_limits<double>::infinity();
  double worst_increase = -std::numeric_limits<double>::infinity();
  for (double eta : {1.0, 1.5, 2.0, 3.0, 4.0, 6.0}) {
    const IwOptions opts{ClipConfig{eta, ClipMode::kCap}, true, true, true};
    const double bias =
        (estimator_expectation(hooks.iw_grpg(opts), inst.policy, inst.behavior, inst.task, kGroup) -
         oracle)
            .norm();
    worst_increase = std::max(worst_increase, bias - prev);
    prev = bias;
    detail += "eta=" + std::to_string(eta) + ":" + std::to_string(bias) + " ";
  }
  const IwOptions unclipped{ClipConfig{std::numeric_limits<double>::infinity(), ClipMode::kCap},
                            true, true, true};
  const double limit =
      (estimator_expectation(hooks.iw_grpg(unclipped), inst.policy, inst.behavior, inst.task,
                             kGroup) -
       oracle)
          .norm();
  detail += "eta=inf:" + std::to_string(limit);
  CheckResult c = make_check("clipping_bias_monotone", std::max(worst_increase, limit - 1e-8), 0.0,
                             describe(inst, kGroup), detail);
  c.passed = worst_increase <= 1e-12 && limit <= 1e-8;
  out.push_back(std::move(c));
}

void check_monte_carlo(const VerifyHooks& hooks, std::vector<CheckResult>& out) {
  const Instance inst = reference_bandit();
  const GradientVector oracle = exact_gradient(inst.policy, inst.task);
  const IwOptions loo{ClipConfig{1.0, ClipMode::kOff}, true, true, true};
  const auto mc = monte_carlo_expectation(hooks.iw_grpg(loo), inst.policy, inst.behavior,
                                          inst.task, 4, 200'000, 31337);
  const double rel = (mc.mean - oracle).norm() / oracle.norm();
  const double cosine = mc.mean.dot(oracle) / (mc.mean.norm() * oracle.norm());
  CheckResult c = make_check("monte_carlo_convergence", rel, 0.05, describe(inst, 4),
                             "cosine " + std::to_string(cosine) + ", 2e5 groups");
  c.passed = c.passed && cosine >= 0.99;
  out.push_back(std::move(c));
}

}  // namespace

std::vector<CheckResult> run_verification(VerifyLevel level, const VerifyHooks& hooks) {
  std::vector<CheckResult> out;
  const auto instances = enumeration_instances();
  check_unbiased(instances, hooks, out);
  check_identities(instances, out);
  check_finite_differences(instances, out);
  check_onpolicy_reduction(instances, hooks, out);
  check_self_inclusion_bias(hooks, out);
  if (level == VerifyLevel::kFull) {
    check_clipping_bias(hooks, out);
    check_monte_carlo(hooks, out);
  }
  return out;
}

}  // namespace rapid
