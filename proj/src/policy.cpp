#include "rapid/policy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rapid/errors.hpp"

namespace rapid {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void check_prompt_class(int cls, int num_classes) {
  if (cls < 0 || cls >= num_classes) {
    throw DomainError("prompt class " + std::to_string(cls) + " outside feature map range [0, " +
                      std::to_string(num_classes) + ")");
  }
}

// Per-candidate logits and their log-normalizer for one context.
struct StepScores {
  Eigen::VectorXd logits;
  double log_norm = 0.0;
};

StepScores step_scores(const Policy& policy, const Prompt& prompt, std::span<const Token> prefix,
                       std::vector<std::size_t>& scratch) {
  const int v_size = policy.vocab().size;
  StepScores s;
  s.logits.resize(v_size);
  const auto& theta = policy.theta();
  for (Token v = 0; v < v_size; ++v) {
    scratch.clear();
    policy.features().active(prompt, prefix, v, scratch);
    double z = 0.0;
    for (std::size_t idx : scratch) z += theta[static_cast<Eigen::Index>(idx)];
    s.logits[v] = z;
  }
  const double m = s.logits.maxCoeff();
  s.log_norm = m + std::log((s.logits.array() - m).exp().sum());
  return s;
}

void check_tokens(const Policy& policy, std::span<const Token> tokens) {
  if (static_cast<int>(tokens.size()) > policy.max_len()) {
    throw LengthError("sequence of length " + std::to_string(tokens.size()) +
                      " exceeds max_len " + std::to_string(policy.max_len()));
  }
  const auto& vocab = policy.vocab();
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (!vocab.contains(tokens[t])) {
      throw DomainError("token " + std::to_string(tokens[t]) + " at position " +
                        std::to_string(t) + " outside vocabulary of size " +
                        std::to_string(vocab.size));
    }
    if (vocab.eos && tokens[t] == *vocab.eos && t + 1 != tokens.size()) {
      throw DomainError("eos token before end of sequence at position " + std::to_string(t));
    }
  }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(base) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

void validate(const Vocab& vocab) {
  if (vocab.size < 2) throw DomainError("vocabulary size must be at least 2");
  if (vocab.eos && !vocab.contains(*vocab.eos)) {
    throw DomainError("eos token outside vocabulary");
  }
}

BigramFeatures::BigramFeatures(int num_classes, int vocab_size, int position_buckets)
    : num_classes_(num_classes), vocab_(vocab_size), buckets_(position_buckets) {
  if (num_classes < 1 || vocab_size < 2 || position_buckets < 1) {
    throw DomainError("bigram features need num_classes >= 1, vocab >= 2, buckets >= 1");
  }
}

std::size_t BigramFeatures::dimension() const {
  const auto per_context = static_cast<std::size_t>(buckets_) * vocab_;
  return static_cast<std::size_t>(num_classes_) * per_context +
         static_cast<std::size_t>(vocab_ + 1) * per_context;
}

void BigramFeatures::active(const Prompt& prompt, std::span<const Token> prefix, Token candidate,
                            std::vector<std::size_t>& out) const {
  check_prompt_class(prompt.cls, num_classes_);
  const auto bucket = static_cast<std::size_t>(
      std::min<std::size_t>(prefix.size(), static_cast<std::size_t>(buckets_ - 1)));
  const auto per_context = static_cast<std::size_t>(buckets_) * vocab_;
  const auto cand = static_cast<std::size_t>(candidate);
  out.push_back(static_cast<std::size_t>(prompt.cls) * per_context + bucket * vocab_ + cand);
  // Previous-token block; slot 0 is BOS.
  const std::size_t prev = prefix.empty() ? 0 : static_cast<std::size_t>(prefix.back()) + 1;
  out.push_back(static_cast<std::size_t>(num_classes_) * per_context + prev * per_context +
                bucket * vocab_ + cand);
}

UnigramFeatures::UnigramFeatures(int num_classes, int vocab_size)
    : num_classes_(num_classes), vocab_(vocab_size) {
  if (num_classes < 1 || vocab_size < 2) {
    throw DomainError("unigram features need num_classes >= 1, vocab >= 2");
  }
}

std::size_t UnigramFeatures::dimension() const {
  return static_cast<std::size_t>(num_classes_) * vocab_;
}

void UnigramFeatures::active(const Prompt& prompt, std::span<const Token>, Token candidate,
                             std::vector<std::size_t>& out) const {
  check_prompt_class(prompt.cls, num_classes_);
  out.push_back(static_cast<std::size_t>(prompt.cls) * vocab_ + static_cast<std::size_t>(candidate));
}

Policy::Policy(std::shared_ptr<const FeatureMap> features, Vocab vocab, int max_len)
    : Policy(features, vocab, max_len,
             Eigen::VectorXd::Zero(static_cast<Eigen::Index>(features ? features->dimension() : 0))) {}

Policy::Policy(std::shared_ptr<const FeatureMap> features, Vocab vocab, int max_len,
               Eigen::VectorXd theta)
    : features_(std::move(features)), vocab_(vocab), max_len_(max_len) {
  if (!features_) throw DomainError("policy requires a feature map");
  validate(vocab_);
  if (max_len_ < 1) throw DomainError("max_len must be positive");
  set_theta(std::move(theta));
}

void Policy::set_theta(Eigen::VectorXd theta) {
  if (static_cast<std::size_t>(theta.size()) != features_->dimension()) {
    throw LengthError("theta has length " + std::to_string(theta.size()) +
                      ", feature dimension is " + std::to_string(features_->dimension()));
  }
  theta_ = std::move(theta);
}

Policy Policy::with_theta(Eigen::VectorXd theta) const {
  Policy p = *this;
  p.set_theta(std::move(theta));
  return p;
}

double Generation::total_logprob() const {
  double s = 0.0;
  for (double lp : logprobs) s += lp;
  return s;
}

Eigen::VectorXd next_token_dist(const Policy& policy, const Prompt& prompt,
                                std::span<const Token> prefix) {
  if (static_cast<int>(prefix.size()) >= policy.max_len()) {
    throw LengthError("prefix of length " + std::to_string(prefix.size()) +
                      " leaves no room below max_len " + std::to_string(policy.max_len()));
  }
  std::vector<std::size_t> scratch;
  const StepScores s = step_scores(policy, prompt, prefix, scratch);
  return (s.logits.array() - s.log_norm).exp().matrix();
}

std::vector<double> token_logprobs(const Policy& policy, const Prompt& prompt,
                                   std::span<const Token> tokens) {
  check_tokens(policy, tokens);
  std::vector<double> out;
  out.reserve(tokens.size());
  std::vector<std::size_t> scratch;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const StepScores s = step_scores(policy, prompt, tokens.subspan(0, t), scratch);
    out.push_back(s.logits[tokens[t]] - s.log_norm);
  }
  return out;
}

double sequence_logprob(const Policy& policy, const Prompt& prompt,
                        std::span<const Token> tokens) {
  double total = 0.0;
  for (double lp : token_logprobs(policy, prompt, tokens)) total += lp;
  return total;
}

GradientVector grad_sequence_logprob(const Policy& policy, const Prompt& prompt,
                                     std::span<const Token> tokens) {
  check_tokens(policy, tokens);
  GradientVector grad = GradientVector::Zero(static_cast<Eigen::Index>(policy.dimension()));
  std::vector<std::size_t> scratch;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto prefix = tokens.subspan(0, t);
    const StepScores s = step_scores(policy, prompt, prefix, scratch);
    for (Token v = 0; v < policy.vocab().size; ++v) {
      const double p = std::exp(s.logits[v] - s.log_norm);
      const double coeff = (v == tokens[t] ? 1.0 : 0.0) - p;
      scratch.clear();
      policy.features().active(prompt, prefix, v, scratch);
      for (std::size_t idx : scratch) grad[static_cast<Eigen::Index>(idx)] += coeff;
    }
  }
  return grad;
}

Generation sample_generation(const Policy& policy, const Prompt& prompt, Rng& rng) {
  Generation gen;
  std::vector<std::size_t> scratch;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto& eos = policy.vocab().eos;
  while (static_cast<int>(gen.tokens.size()) < policy.max_len()) {
    const StepScores s = step_scores(policy, prompt, gen.tokens, scratch);
    const double u = unif(rng);
    double cum = 0.0;
    Token chosen = policy.vocab().size - 1;
    for (Token v = 0; v < policy.vocab().size; ++v) {
      cum += std::exp(s.logits[v] - s.log_norm);
      if (u < cum) {
        chosen = v;
        break;
      }
    }
    gen.tokens.push_back(chosen);
    gen.logprobs.push_back(s.logits[chosen] - s.log_norm);
    if (eos && chosen == *eos) break;
  }
  return gen;
}

std::vector<ScoredOutput> enumerate_outputs(const Policy& policy, const Prompt& prompt,
                                            std::uint64_t cap) {
  const auto v_size = static_cast<std::uint64_t>(policy.vocab().size);
  std::uint64_t space = 1;
  for (int i = 0; i < policy.max_len(); ++i) {
    if (space > cap / v_size) {
      throw CapacityError("output space vocab^max_len exceeds enumeration cap " +
                          std::to_string(cap));
    }
    space *= v_size;
  }

  std::vector<ScoredOutput> out;
  std::vector<std::size_t> scratch;
  const auto& eos = policy.vocab().eos;
  TokenSeq prefix;
  // Depth-first over the prefix tree, carrying the prefix log-probability.
  auto visit = [&](auto&& self, double logp) -> void {
    const StepScores s = step_scores(policy, prompt, prefix, scratch);
    for (Token v = 0; v < policy.vocab().size; ++v) {
      const double lp = logp + (s.logits[v] - s.log_norm);
      prefix.push_back(v);
      if ((eos && v == *eos) || static_cast<int>(prefix.size()) == policy.max_len()) {
        out.push_back({prefix, std::exp(lp)});
      } else {
        self(self, lp);
      }
      prefix.pop_back();
    }
  };
  visit(visit, 0.0);
  return out;
}

}  // namespace rapid
