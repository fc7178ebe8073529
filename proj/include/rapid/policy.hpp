#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rapid/types.hpp"

namespace rapid {

using Rng = std::mt19937_64;

// Mixes a base seed with stream coordinates into an independent seed
// (splitmix64 finalizer applied per coordinate).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

// Sparse binary feature map phi(prompt, prefix, candidate). Implementations
// must be deterministic and emit indices below dimension().
class FeatureMap {
 public:
  virtual ~FeatureMap() = default;

  virtual std::size_t dimension() const = 0;
  virtual std::string name() const = 0;

  // Appends the active feature indices for `candidate` following `prefix`.
  virtual void active(const Prompt& prompt, std::span<const Token> prefix, Token candidate,
                      std::vector<std::size_t>& out) const = 0;
};

// Two indices per candidate: (prompt class, position bucket, candidate) and
// (previous token or BOS, position bucket, candidate).
class BigramFeatures final : public FeatureMap {
 public:
  BigramFeatures(int num_classes, int vocab_size, int position_buckets);

  std::size_t dimension() const override;
  std::string name() const override { return "bigram"; }
  void active(const Prompt& prompt, std::span<const Token> prefix, Token candidate,
              std::vector<std::size_t>& out) const override;

 private:
  int num_classes_;
  int vocab_;
  int buckets_;
};

// One index per candidate: (prompt class, candidate). Position-independent.
class UnigramFeatures final : public FeatureMap {
 public:
  UnigramFeatures(int num_classes, int vocab_size);

  std::size_t dimension() const override;
  std::string name() const override { return "unigram"; }
  void active(const Prompt& prompt, std::span<const Token> prefix, Token candidate,
              std::vector<std::size_t>& out) const override;

 private:
  int num_classes_;
  int vocab_;
};

// Log-linear autoregressive policy: pi(v | x, y_<t) = softmax_v(theta . phi(x, y_<t, v)).
// Immutable apart from explicit parameter assignment; the feature map is
// shared between copies.
class Policy {
 public:
  Policy(std::shared_ptr<const FeatureMap> features, Vocab vocab, int max_len);
  Policy(std::shared_ptr<const FeatureMap> features, Vocab vocab, int max_len,
         Eigen::VectorXd theta);

  const Eigen::VectorXd& theta() const { return theta_; }
  void set_theta(Eigen::VectorXd theta);
  Policy with_theta(Eigen::VectorXd theta) const;

  const FeatureMap& features() const { return *features_; }
  std::shared_ptr<const FeatureMap> shared_features() const { return features_; }
  const Vocab& vocab() const { return vocab_; }
  int max_len() const { return max_len_; }
  std::size_t dimension() const { return static_cast<std::size_t>(theta_.size()); }

 private:
  std::shared_ptr<const FeatureMap> features_;
  Vocab vocab_;
  int max_len_;
  Eigen::VectorXd theta_;
};

struct Generation {
  TokenSeq tokens;
  // Per-token log-probabilities under the policy that sampled the tokens.
  std::vector<double> logprobs;

  double total_logprob() const;
};

Eigen::VectorXd next_token_dist(const Policy& policy, const Prompt& prompt,
                                std::span<const Token> prefix);

// log pi(y_t | x, y_<t) for every position of `tokens`.
std::vector<double> token_logprobs(const Policy& policy, const Prompt& prompt,
                                   std::span<const Token> tokens);

double sequence_logprob(const Policy& policy, const Prompt& prompt,
                        std::span<const Token> tokens);

// Sum over positions of phi(chosen) - E_pi[phi], as a dense vector.
GradientVector grad_sequence_logprob(const Policy& policy, const Prompt& prompt,
                                     std::span<const Token> tokens);

Generation sample_generation(const Policy& policy, const Prompt& prompt, Rng& rng);

struct ScoredOutput {
  TokenSeq tokens;
  double probability = 0.0;
};

inline constexpr std::uint64_t kDefaultEnumerationCap = 1'000'000;

// Every terminated output sequence with its probability. Requires
// vocab^max_len <= cap.
std::vector<ScoredOutput> enumerate_outputs(const Policy& policy, const Prompt& prompt,
                                            std::uint64_t cap = kDefaultEnumerationCap);

}  // namespace rapid
