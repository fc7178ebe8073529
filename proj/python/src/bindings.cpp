#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "rapid/commands.hpp"
#include "rapid/config.hpp"
#include "rapid/errors.hpp"
#include "rapid/estimators.hpp"
#include "rapid/metrics.hpp"
#include "rapid/oracle.hpp"
#include "rapid/policy.hpp"
#include "rapid/tasks.hpp"
#include "rapid/trainer.hpp"
#include "rapid/verify.hpp"

namespace py = pybind11;
using namespace rapid;

namespace {

py::dict record_dict(const MetricsRecord& r) {
  py::dict d;
  d["outer_step"] = r.outer_step;
  d["inner_step"] = r.inner_step;
  d["global_step"] = r.global_step;
  d["mean_reward"] = r.mean_reward;
  d["staleness"] = r.staleness;
  d["staleness_signed"] = r.staleness_signed;
  d["staleness_raw"] = r.staleness_raw;
  d["clip_fraction"] = r.clip_fraction;
  d["mean_length"] = r.mean_length;
  d["grad_norm"] = r.grad_norm;
  d["step_cost"] = r.step_cost;
  d["cumulative_cost"] = r.cumulative_cost;
  d["cumulative_inference_cost"] = r.cumulative_inference_cost;
  d["generations"] = r.generations;
  d["snapshots"] = r.snapshots;
  d["beta_kl"] = r.beta_kl;
  d["oracle_J"] = r.oracle_J ? py::cast(*r.oracle_J) : py::none();
  return d;
}

EstimatorFn named_estimator(const std::string& name, const IwOptions& opts) {
  if (name == "grpg") return grpg_estimator();
  if (name == "iw_grpg") return iw_grpg_estimator(opts);
  throw ConfigError("unknown estimator '" + name + "' (expected grpg or iw_grpg)");
}

int run_command(const std::function<int(std::ostream&, std::ostream&)>& fn, std::string& out,
                std::string& err) {
  std::ostringstream o, e;
  int code;
  {
    py::gil_scoped_release release;
    code = fn(o, e);
  }
  out = o.str();
  err = e.str();
  return code;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Importance-weighted group-relative policy gradients on enumerable tasks";

  auto base = py::register_exception<Error>(m, "RapidError");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<LengthError>(m, "LengthError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<CapacityError>(m, "CapacityError", base.ptr());
  py::register_exception<LookupError>(m, "LookupError", base.ptr());
  py::register_exception<ArityError>(m, "ArityError", base.ptr());
  auto numeric = py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<DegenerateSampleError>(m, "DegenerateSampleError", numeric.ptr());
  py::register_exception<UndefinedCorrelationError>(m, "UndefinedCorrelationError", base.ptr());

  py::class_<Prompt>(m, "Prompt")
      .def(py::init<int, int, TokenSeq>(), py::arg("id"), py::arg("cls"), py::arg("payload"))
      .def_readonly("id", &Prompt::id)
      .def_readonly("cls", &Prompt::cls)
      .def_readonly("payload", &Prompt::payload)
      .def("__repr__", [](const Prompt& p) {
        return "Prompt(id=" + std::to_string(p.id) + ", cls=" + std::to_string(p.cls) + ")";
      });

  py::class_<Task>(m, "Task")
      .def_readonly("name", &Task::name)
      .def_property_readonly("vocab_size", [](const Task& t) { return t.vocab.size; })
      .def_readonly("max_len", &Task::max_len)
      .def_readonly("prompts", &Task::prompts)
      .def("prompt", &Task::prompt, py::return_value_policy::reference_internal)
      .def("reward", [](const Task& t, const Prompt& p, const TokenSeq& y) { return reward(t, p, y); });

  m.def(
      "builtin_task",
      [](const std::string& name, int vocab, int prompts, int max_len, int bits,
         std::uint64_t seed) { return builtin_task(name, TaskParams{vocab, prompts, max_len, bits, seed}); },
      py::arg("name"), py::arg("vocab") = 8, py::arg("prompts") = 16, py::arg("max_len") = 2,
      py::arg("bits") = 3, py::arg("seed") = 0);

  py::class_<Policy>(m, "Policy")
      .def_property("theta", &Policy::theta, &Policy::set_theta)
      .def_property_readonly("dimension", &Policy::dimension)
      .def_property_readonly("max_len", &Policy::max_len)
      .def_property_readonly("vocab_size", [](const Policy& p) { return p.vocab().size; })
      .def_property_readonly("features", [](const Policy& p) { return p.features().name(); })
      .def("with_theta", &Policy::with_theta);

  m.def("make_policy", &make_policy, py::arg("task"), py::arg("features") = "");
  m.def("next_token_dist",
        [](const Policy& p, const Prompt& x, const TokenSeq& prefix) { return next_token_dist(p, x, prefix); },
        py::arg("policy"), py::arg("prompt"), py::arg("prefix") = TokenSeq{});
  m.def("sequence_logprob",
        [](const Policy& p, const Prompt& x, const TokenSeq& y) { return sequence_logprob(p, x, y); });
  m.def("grad_sequence_logprob", [](const Policy& p, const Prompt& x, const TokenSeq& y) {
    return grad_sequence_logprob(p, x, y);
  });
  m.def(
      "sample_generation",
      [](const Policy& p, const Prompt& x, std::uint64_t seed) {
        Rng rng(seed);
        Generation g = sample_generation(p, x, rng);
        return py::make_tuple(g.tokens, g.logprobs);
      },
      py::arg("policy"), py::arg("prompt"), py::arg("seed"));
  m.def(
      "enumerate_outputs",
      [](const Policy& p, const Prompt& x, std::uint64_t cap) {
        std::vector<std::pair<TokenSeq, double>> out;
        for (auto& o : enumerate_outputs(p, x, cap)) out.emplace_back(std::move(o.tokens), o.probability);
        return out;
      },
      py::arg("policy"), py::arg("prompt"), py::arg("cap") = kDefaultEnumerationCap);

  py::enum_<ClipMode>(m, "ClipMode")
      .value("CAP", ClipMode::kCap)
      .value("FLOOR", ClipMode::kFloor)
      .value("SYMMETRIC", ClipMode::kSymmetric)
      .value("OFF", ClipMode::kOff);

  py::class_<ClipConfig>(m, "ClipConfig")
      .def(py::init([](double eta, ClipMode mode) { return ClipConfig{eta, mode}; }),
           py::arg("eta") = 2.0, py::arg("mode") = ClipMode::kCap)
      .def_readwrite("eta", &ClipConfig::eta)
      .def_readwrite("mode", &ClipConfig::mode);

  py::class_<IwOptions>(m, "IwOptions")
      .def(py::init([](ClipConfig clip, bool loo, bool clip_leading, bool iw) {
             return IwOptions{clip, loo, clip_leading, iw};
           }),
           py::arg("clip") = ClipConfig{}, py::arg("leave_one_out") = false,
           py::arg("clip_leading") = true, py::arg("importance_weighting") = true)
      .def_readwrite("clip", &IwOptions::clip)
      .def_readwrite("leave_one_out", &IwOptions::leave_one_out)
      .def_readwrite("clip_leading", &IwOptions::clip_leading)
      .def_readwrite("importance_weighting", &IwOptions::importance_weighting);

  m.def("clip_weight", [](double w, const ClipConfig& cfg) {
    const auto c = clip_weight(w, cfg);
    return py::make_tuple(c.value, c.clipped);
  });

  py::class_<Sample>(m, "Sample")
      .def_readonly("prompt", &Sample::prompt)
      .def_property_readonly("tokens", [](const Sample& s) { return s.generation.tokens; })
      .def_readwrite("reward", &Sample::reward)
      .def_readwrite("behavior_logprob", &Sample::behavior_logprob)
      .def_readwrite("group_id", &Sample::group_id);

  py::class_<GroupBatch>(m, "GroupBatch")
      .def(py::init([](std::vector<Sample> s) { return GroupBatch{std::move(s)}; }))
      .def_readonly("samples", &GroupBatch::samples)
      .def("__len__", &GroupBatch::size);

  m.def("make_sample", &make_sample, py::arg("behavior"), py::arg("task"), py::arg("prompt"),
        py::arg("tokens"), py::arg("group_id") = 0);
  m.def("importance_weight", &importance_weight);
  m.def("group_advantages", &group_advantages);
  m.def("iw_group_advantages", &iw_group_advantages, py::arg("group"), py::arg("policy"),
        py::arg("clip"), py::arg("leave_one_out") = false);
  m.def("grpg_gradient", [](const std::vector<GroupBatch>& g, const Policy& p) {
    return grpg_gradient(g, p);
  });
  m.def(
      "iw_grpg_gradient",
      [](const std::vector<GroupBatch>& g, const Policy& p, const IwOptions& o) {
        return iw_grpg_gradient(g, p, o);
      },
      py::arg("groups"), py::arg("policy"), py::arg("options") = IwOptions{});
  m.def(
      "kl_regularized_gradient",
      [](const std::vector<GroupBatch>& g, const Policy& p, const Policy& ref, double beta) {
        return kl_regularized_gradient(g, p, ref, beta);
      },
      py::arg("groups"), py::arg("policy"), py::arg("reference"), py::arg("beta") = kDefaultKlBeta);

  m.def("exact_objective", [](const Policy& p, const Task& t) { return exact_objective(p, t); });
  m.def("exact_gradient", [](const Policy& p, const Task& t) { return exact_gradient(p, t); });
  m.def(
      "estimator_expectation",
      [](const std::string& name, const Policy& p, const Policy& mu, const Task& t, int n,
         const IwOptions& o) { return estimator_expectation(named_estimator(name, o), p, mu, t, n); },
      py::arg("estimator"), py::arg("policy"), py::arg("behavior"), py::arg("task"),
      py::arg("group_size"), py::arg("options") = IwOptions{});
  m.def(
      "monte_carlo_expectation",
      [](const std::string& name, const Policy& p, const Policy& mu, const Task& t, int n,
         std::uint64_t groups, std::uint64_t seed, const IwOptions& o) {
        auto r = monte_carlo_expectation(named_estimator(name, o), p, mu, t, n, groups, seed);
        return py::make_tuple(r.mean, r.std_error);
      },
      py::arg("estimator"), py::arg("policy"), py::arg("behavior"), py::arg("task"),
      py::arg("group_size"), py::arg("groups"), py::arg("seed"), py::arg("options") = IwOptions{});

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("n_inference", &TrainConfig::n_inference)
      .def_readwrite("n_group", &TrainConfig::n_group)
      .def_readwrite("n_step", &TrainConfig::n_step)
      .def_readwrite("outer_steps", &TrainConfig::outer_steps)
      .def_readwrite("clip", &TrainConfig::clip)
      .def_readwrite("clip_leading", &TrainConfig::clip_leading)
      .def_readwrite("leave_one_out", &TrainConfig::leave_one_out)
      .def_readwrite("importance_weighting", &TrainConfig::importance_weighting)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("beta_kl", &TrainConfig::beta_kl)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("workers", &TrainConfig::workers)
      .def_readwrite("oracle_every", &TrainConfig::oracle_every)
      .def_property(
          "algorithm", [](const TrainConfig& c) { return to_string(c.algorithm); },
          [](TrainConfig& c, const std::string& s) { c.algorithm = parse_algorithm(s); })
      .def_property(
          "optimizer", [](const TrainConfig& c) { return to_string(c.optimizer); },
          [](TrainConfig& c, const std::string& s) { c.optimizer = parse_optimizer(s); })
      .def_property_readonly("H", &TrainConfig::batch_size_ratio);

  m.def(
      "train",
      [](const TrainConfig& c, const Task& t, const Policy& initial) {
        TrainResult r = [&] {
          py::gil_scoped_release release;
          return run_training(c, t, initial);
        }();
        py::list records;
        for (const auto& rec : r.records) records.append(record_dict(rec));
        return py::make_tuple(r.policy, records);
      },
      py::arg("config"), py::arg("task"), py::arg("initial"));

  m.def("pass_at_k", [](const std::vector<std::vector<bool>>& f, int k) { return pass_at_k(f, k); });
  m.def("pearson", [](const std::vector<double>& x, const std::vector<double>& y) { return pearson(x, y); });
  m.def(
      "simulated_inference_cost",
      [](std::int64_t batches, std::int64_t samples, double a_inf, double b_inf) {
        return simulated_phase_cost(CostModel{a_inf, b_inf, 0.0, 0.0}, PhaseShape{batches, samples, 0, 0})
            .inference;
      },
      py::arg("batches"), py::arg("samples"), py::arg("a_inf") = 10.0, py::arg("b_inf") = 0.05);

  m.def(
      "verify",
      [](const std::string& level) {
        std::vector<CheckResult> checks;
        {
          py::gil_scoped_release release;
          checks = run_verification(parse_verify_level(level));
        }
        py::list out;
        for (const auto& c : checks) {
          py::dict d;
          d["name"] = c.name;
          d["passed"] = c.passed;
          d["max_deviation"] = c.max_deviation;
          d["tolerance"] = c.tolerance;
          out.append(d);
        }
        return out;
      },
      py::arg("level") = "quick");

  m.def(
      "cli_train",
      [](std::vector<std::string> overrides, const std::string& out_dir) {
        RunArgs a;
        a.overrides = std::move(overrides);
        a.out = out_dir;
        std::string out, err;
        const int code = run_command([&](std::ostream& o, std::ostream& e) { return cmd_train(a, o, e); },
                                     out, err);
        return py::make_tuple(code, err);
      },
      py::arg("overrides"), py::arg("out"));
}
