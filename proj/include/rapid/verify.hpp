#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rapid/oracle.hpp"

namespace rapid {

enum class VerifyLevel { kQuick, kFull };

VerifyLevel parse_verify_level(const std::string& name);

struct CheckResult {
  std::string name;
  bool passed = false;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  std::string detail;
  // Enough to rebuild the failing instance: task, parameters, group size.
  nlohmann::json instance;
};

// Estimators under test. Defaults are the library implementations; tests
// substitute doubles to check that the suite notices broken estimators.
struct VerifyHooks {
  std::function<EstimatorFn(const IwOptions&)> iw_grpg = iw_grpg_estimator;
  EstimatorFn grpg = grpg_estimator();
};

// Oracle suite: estimator expectations by joint enumeration, finite
// differences, on-policy reductions, score and weight identities. The full
// level adds the self-inclusion and clipping bias checks and a Monte Carlo
// convergence run.
std::vector<CheckResult> run_verification(VerifyLevel level, const VerifyHooks& hooks = {});

nlohmann::json to_json(const CheckResult& check);

}  // namespace rapid
