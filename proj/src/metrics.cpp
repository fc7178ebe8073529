#include "rapid/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "rapid/errors.hpp"

namespace rapid {

void validate(const CostModel& model) {
  if (model.a_inf < 0 || model.b_inf < 0 || model.a_bp < 0 || model.b_bp < 0) {
    throw ConfigError("cost model coefficients must be non-negative");
  }
}

PhaseCost simulated_phase_cost(const CostModel& model, const PhaseShape& shape) {
  if (shape.inference_batches < 0 || shape.inference_samples < 0 || shape.backprop_batches < 0 ||
      shape.backprop_samples < 0) {
    throw DomainError("phase counts must be non-negative");
  }
  PhaseCost c;
  c.inference = static_cast<double>(shape.inference_batches) * model.a_inf +
                static_cast<double>(shape.inference_samples) * model.b_inf;
  c.backprop = static_cast<double>(shape.backprop_batches) * model.a_bp +
               static_cast<double>(shape.backprop_samples) * model.b_bp;
  return c;
}

namespace {

template <typename F>
double mean_over(std::span<const Sample> batch, F&& f) {
  if (batch.empty()) return 0.0;
  double s = 0.0;
  for (const auto& sample : batch) s += f(sample);
  return s / static_cast<double>(batch.size());
}

}  // namespace

double staleness(std::span<const Sample> batch, const Policy& policy, const ClipConfig& cfg) {
  return mean_over(batch, [&](const Sample& s) {
    return std::abs(std::log(clip_weight(importance_weight(policy, s), cfg).value));
  });
}

double signed_staleness(std::span<const Sample> batch, const Policy& policy,
                        const ClipConfig& cfg) {
  return mean_over(batch, [&](const Sample& s) {
    return std::log(clip_weight(importance_weight(policy, s), cfg).value);
  });
}

double clip_fraction(std::span<const Sample> batch, const Policy& policy, const ClipConfig& cfg) {
  return mean_over(batch, [&](const Sample& s) {
    return clip_weight(importance_weight(policy, s), cfg).clipped ? 1.0 : 0.0;
  });
}

std::vector<double> token_weight_trace(const Sample& sample, const Policy& policy) {
  const auto current = token_logprobs(policy, sample.prompt, sample.generation.tokens);
  const auto& behavior = sample.generation.logprobs;
  if (behavior.size() != current.size()) {
    throw LengthError("sample carries " + std::to_string(behavior.size()) +
                      " behavior log-probs for " + std::to_string(current.size()) + " tokens");
  }
  std::vector<double> trace(current.size());
  for (std::size_t t = 0; t < current.size(); ++t) trace[t] = current[t] - behavior[t];
  return trace;
}

double pass_at_k(std::span<const std::vector<bool>> flags_per_prompt, int k) {
  if (k < 1) throw ArityError("pass@k needs k >= 1");
  if (flags_per_prompt.empty()) throw ArityError("pass@k needs at least one prompt");
  double total = 0.0;
  for (const auto& flags : flags_per_prompt) {
    const int g = static_cast<int>(flags.size());
    if (g < k) {
      throw ArityError("pass@" + std::to_string(k) + " needs at least k generations, got " +
                       std::to_string(g));
    }
    int c = 0;
    for (bool f : flags) c += f ? 1 : 0;
    // C(g-c, k) / C(g, k) = prod_{i=0}^{k-1} (g-c-i)/(g-i); zero once g-c < k.
    double miss = 1.0;
    for (int i = 0; i < k; ++i) {
      const int num = g - c - i;
      if (num <= 0) {
        miss = 0.0;
        break;
      }
      miss *= static_cast<double>(num) / static_cast<double>(g - i);
    }
    total += 1.0 - miss;
  }
  return total / static_cast<double>(flags_per_prompt.size());
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double stddev(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ArityError("pearson needs equal-length series");
  if (xs.size() < 2) throw ArityError("pearson needs at least two points");
  const double mx = mean(xs);
  const double my = mean(ys);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelationError("pearson of a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

std::string fmt(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DomainError("malformed number '" + s + "' in metrics CSV");
  }
  return v;
}

constexpr const char* kColumns[] = {
    "outer_step",  "inner_step",      "global_step",   "mean_reward",
    "staleness",   "staleness_signed", "staleness_raw", "clip_fraction",
    "mean_length", "grad_norm",       "step_cost",     "cumulative_cost",
    "cumulative_inference_cost",      "generations",   "snapshots",
    "beta_kl",     "oracle_J"};
constexpr std::size_t kNumColumns = sizeof(kColumns) / sizeof(kColumns[0]);

}  // namespace

std::string metrics_csv_header() {
  std::string h;
  for (std::size_t i = 0; i < kNumColumns; ++i) {
    if (i) h += ',';
    h += kColumns[i];
  }
  return h;
}

void write_metrics_csv(std::ostream& os, std::span<const MetricsRecord> records) {
  os << metrics_csv_header() << '\n';
  for (const auto& r : records) {
    os << r.outer_step << ',' << r.inner_step << ',' << r.global_step << ',' << fmt(r.mean_reward)
       << ',' << fmt(r.staleness) << ',' << fmt(r.staleness_signed) << ','
       << fmt(r.staleness_raw) << ',' << fmt(r.clip_fraction) << ',' << fmt(r.mean_length) << ','
       << fmt(r.grad_norm) << ',' << fmt(r.step_cost) << ',' << fmt(r.cumulative_cost) << ','
       << fmt(r.cumulative_inference_cost) << ',' << r.generations << ',' << r.snapshots << ','
       << fmt(r.beta_kl) << ',' << (r.oracle_J ? fmt(*r.oracle_J) : std::string()) << '\n';
  }
}

std::vector<MetricsRecord> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != metrics_csv_header()) {
    throw DomainError("metrics CSV header does not match the expected column layout");
  }
  std::vector<MetricsRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != kNumColumns) {
      throw DomainError("metrics CSV line " + std::to_string(lineno) + " has " +
                        std::to_string(cells.size()) + " cells");
    }
    MetricsRecord r;
    r.outer_step = std::stoi(cells[0]);
    r.inner_step = std::stoi(cells[1]);
    r.global_step = std::stoi(cells[2]);
    r.mean_reward = parse_double(cells[3]);
    r.staleness = parse_double(cells[4]);
    r.staleness_signed = parse_double(cells[5]);
    r.staleness_raw = parse_double(cells[6]);
    r.clip_fraction = parse_double(cells[7]);
    r.mean_length = parse_double(cells[8]);
    r.grad_norm = parse_double(cells[9]);
    r.step_cost = parse_double(cells[10]);
    r.cumulative_cost = parse_double(cells[11]);
    r.cumulative_inference_cost = parse_double(cells[12]);
    r.generations = std::stoll(cells[13]);
    r.snapshots = std::stoll(cells[14]);
    r.beta_kl = parse_double(cells[15]);
    if (!cells[16].empty()) r.oracle_J = parse_double(cells[16]);
    out.push_back(r);
  }
  return out;
}

void write_token_trace_csv(std::ostream& os, std::span<const double> trace) {
  os << "position,log_ratio\n";
  for (std::size_t t = 0; t < trace.size(); ++t) os << t << ',' << fmt(trace[t]) << '\n';
}

nlohmann::json summarize_run(std::span<const MetricsRecord> records, const CostModel& model,
                             std::int64_t n_step) {
  nlohmann::json j;
  j["cost_model"] = {{"a_inf", model.a_inf},
                     {"b_inf", model.b_inf},
                     {"a_bp", model.a_bp},
                     {"b_bp", model.b_bp},
                     {"note", "illustrative affine cost model, not measured hardware times"}};
  j["gradient_steps"] = records.size();
  if (records.empty()) return j;

  std::vector<double> stale, clip, rewards;
  std::optional<double> last_J;
  for (const auto& r : records) {
    stale.push_back(r.staleness);
    clip.push_back(r.clip_fraction);
    rewards.push_back(r.mean_reward);
    if (r.oracle_J) last_J = r.oracle_J;
  }
  const auto& last = records.back();
  j["outer_steps"] = last.outer_step;
  j["generations"] = last.generations;
  j["snapshots"] = last.snapshots;
  j["mean_staleness"] = mean(stale);
  j["mean_clip_fraction"] = mean(clip);
  j["mean_reward"] = mean(rewards);
  j["beta_kl"] = last.beta_kl;
  j["final_oracle_J"] = last_J ? nlohmann::json(*last_J) : nlohmann::json();

  const double inference = last.cumulative_inference_cost;
  const double total = last.cumulative_cost;
  // Same samples, but one inference batch per gradient step.
  const PhaseCost naive = simulated_phase_cost(
      model, PhaseShape{static_cast<std::int64_t>(records.size()), last.generations, 0, 0});
  j["simulated_cost"] = {{"total", total},
                         {"inference", inference},
                         {"backprop", total - inference},
                         {"naive_inference", naive.inference},
                         {"inference_reduction",
                          naive.inference > 0 ? 1.0 - inference / naive.inference : 0.0}};
  j["n_step"] = n_step;
  return j;
}

}  // namespace rapid
