#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rapid/estimators.hpp"

namespace rapid {

// One row per inner gradient step.
struct MetricsRecord {
  int outer_step = 0;   // t, 1-based
  int inner_step = 0;   // h, 1-based within the phase
  int global_step = 0;  // gradient steps so far, 1-based
  double mean_reward = 0.0;
  // Mean |ln clip(w)| over the mini-batch.
  double staleness = 0.0;
  // Mean ln clip(w) (signed) and mean |ln w| before clipping.
  double staleness_signed = 0.0;
  double staleness_raw = 0.0;
  double clip_fraction = 0.0;
  double mean_length = 0.0;
  double grad_norm = 0.0;
  // Simulated seconds charged to this step and running total.
  double step_cost = 0.0;
  double cumulative_cost = 0.0;
  double cumulative_inference_cost = 0.0;
  // Cumulative sampled generations and behavior-policy snapshots.
  std::int64_t generations = 0;
  std::int64_t snapshots = 0;
  double beta_kl = 0.0;
  std::optional<double> oracle_J;
};

// Affine cost of batched inference and backprop, in simulated seconds.
struct CostModel {
  double a_inf = 10.0;   // per inference batch
  double b_inf = 0.05;   // per sampled generation
  double a_bp = 2.0;     // per gradient step
  double b_bp = 0.2;     // per sample in a gradient step
};

void validate(const CostModel& model);

struct PhaseShape {
  std::int64_t inference_batches = 0;
  std::int64_t inference_samples = 0;
  std::int64_t backprop_batches = 0;
  std::int64_t backprop_samples = 0;
};

struct PhaseCost {
  double inference = 0.0;
  double backprop = 0.0;
  double total() const { return inference + backprop; }
};

PhaseCost simulated_phase_cost(const CostModel& model, const PhaseShape& shape);

// Mean over samples of |ln clip(w)|.
double staleness(std::span<const Sample> batch, const Policy& policy, const ClipConfig& cfg);
// Mean over samples of ln clip(w), sign kept.
double signed_staleness(std::span<const Sample> batch, const Policy& policy,
                        const ClipConfig& cfg);
// Fraction of generation-level weights that clip_weight changed.
double clip_fraction(std::span<const Sample> batch, const Policy& policy, const ClipConfig& cfg);

// Per-position ln pi(y_t|.) - ln mu(y_t|.).
std::vector<double> token_weight_trace(const Sample& sample, const Policy& policy);

// Unbiased pass@k: mean over prompts of 1 - C(g - c, k) / C(g, k).
double pass_at_k(std::span<const std::vector<bool>> flags_per_prompt, int k);

double pearson(std::span<const double> xs, std::span<const double> ys);

double mean(std::span<const double> xs);
// Sample standard deviation; 0 for fewer than two values.
double stddev(std::span<const double> xs);

// CSV I/O. Column order is fixed; see metrics_csv_header().
std::string metrics_csv_header();
void write_metrics_csv(std::ostream& os, std::span<const MetricsRecord> records);
std::vector<MetricsRecord> read_metrics_csv(std::istream& is);

void write_token_trace_csv(std::ostream& os, std::span<const double> trace);

// Run-level summary built only from the emitted records and the cost model.
nlohmann::json summarize_run(std::span<const MetricsRecord> records, const CostModel& model,
                             std::int64_t n_step);

}  // namespace rapid
