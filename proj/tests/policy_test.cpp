#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "rapid/errors.hpp"
#include "rapid/policy.hpp"
#include "test_util.hpp"

using namespace rapid;
using namespace rapid::testing;

namespace {

const Prompt kPrompt{0, 0, {}};

TEST(Policy, UniformAtZeroTheta) {
  Policy p = tabular(2, 1);
  Eigen::VectorXd d = next_token_dist(p, kPrompt, {});
  EXPECT_DOUBLE_EQ(d[0], 0.5);
  EXPECT_DOUBLE_EQ(d[1], 0.5);
}

TEST(Policy, SoftmaxOfLogits) {
  Task task = bandit2();
  Policy p = make_policy(task, "unigram");
  Eigen::VectorXd theta(2);
  theta << std::log(3.0), 0.0;
  p.set_theta(theta);
  Eigen::VectorXd d = next_token_dist(p, task.prompts[0], {});
  EXPECT_NEAR(d[0], 0.75, 1e-15);
  EXPECT_NEAR(d[1], 0.25, 1e-15);
}

TEST(Policy, DistributionNormalizedAndPositive) {
  Policy p = tabular(5, 3);
  p.set_theta(random_theta(p.dimension(), 7, 3.0));
  for (Token a = 0; a < 5; ++a) {
    for (Token b = 0; b < 5; ++b) {
      TokenSeq prefix{a, b};
      Eigen::VectorXd d = next_token_dist(p, kPrompt, prefix);
      EXPECT_NEAR(d.sum(), 1.0, 1e-12);
      EXPECT_GT(d.minCoeff(), 0.0);
    }
  }
}

TEST(Policy, PrefixTooLongRaises) {
  Policy p = tabular(2, 2);
  TokenSeq prefix{0, 1};
  EXPECT_THROW(next_token_dist(p, kPrompt, prefix), LengthError);
}

TEST(Policy, SequenceLogprobUniform) {
  Policy p1 = tabular(2, 1);
  EXPECT_DOUBLE_EQ(sequence_logprob(p1, kPrompt, TokenSeq{0}), std::log(0.5));
  Policy p2 = tabular(2, 2);
  EXPECT_DOUBLE_EQ(sequence_logprob(p2, kPrompt, TokenSeq{1, 0}), 2 * std::log(0.5));
}

TEST(Policy, SequenceLogprobMatchesProductOfSteps) {
  Policy p = tabular(3, 3);
  p.set_theta(random_theta(p.dimension(), 11, 2.0));
  for (const auto& out : enumerate_outputs(p, kPrompt)) {
    double prod = 1.0;
    for (std::size_t t = 0; t < out.tokens.size(); ++t) {
      std::span<const Token> prefix(out.tokens.data(), t);
      prod *= next_token_dist(p, kPrompt, prefix)[out.tokens[t]];
    }
    const double lp = sequence_logprob(p, kPrompt, out.tokens);
    EXPECT_NEAR(std::exp(lp) / prod, 1.0, 1e-12);
    EXPECT_NEAR(std::exp(lp), out.probability, 1e-12);
  }
}

TEST(Policy, InvalidTokenRaises) {
  Policy p = tabular(2, 2);
  EXPECT_THROW(sequence_logprob(p, kPrompt, TokenSeq{2}), DomainError);
  EXPECT_THROW(sequence_logprob(p, kPrompt, TokenSeq{-1}), DomainError);
  EXPECT_THROW(grad_sequence_logprob(p, kPrompt, TokenSeq{0, 5}), DomainError);
  EXPECT_THROW(sequence_logprob(p, kPrompt, TokenSeq{0, 0, 0}), LengthError);
}

TEST(Policy, EosOnlyAtEnd) {
  Policy p = tabular(3, 3, 2);
  EXPECT_NO_THROW(sequence_logprob(p, kPrompt, TokenSeq{0, 2}));
  EXPECT_THROW(sequence_logprob(p, kPrompt, TokenSeq{2, 0}), DomainError);
}

TEST(Policy, GradientAtUniformTabular) {
  Task task = bandit2();
  Policy p = make_policy(task, "unigram");
  GradientVector g = grad_sequence_logprob(p, task.prompts[0], TokenSeq{0});
  ASSERT_EQ(g.size(), 2);
  EXPECT_DOUBLE_EQ(g[0], 0.5);
  EXPECT_DOUBLE_EQ(g[1], -0.5);
}

TEST(Policy, ScoreIdentity) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Policy p = tabular(3, 3, 2);
    p.set_theta(random_theta(p.dimension(), seed, 1.5));
    GradientVector acc = GradientVector::Zero(static_cast<Eigen::Index>(p.dimension()));
    for (const auto& out : enumerate_outputs(p, kPrompt)) {
      acc += out.probability * grad_sequence_logprob(p, kPrompt, out.tokens);
    }
    EXPECT_LT(acc.cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Policy, FiniteDifferenceGradient) {
  Policy p = tabular(3, 3, 2);
  const Eigen::VectorXd theta = random_theta(p.dimension(), 5, 1.0);
  p.set_theta(theta);
  const double h = 1e-5;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Eigen::VectorXd dir = random_theta(p.dimension(), 100 + s);
    for (const auto& out : enumerate_outputs(p, kPrompt)) {
      const double plus = sequence_logprob(p.with_theta(theta + h * dir), kPrompt, out.tokens);
      const double minus = sequence_logprob(p.with_theta(theta - h * dir), kPrompt, out.tokens);
      const double fd = (plus - minus) / (2 * h);
      const double an = grad_sequence_logprob(p, kPrompt, out.tokens).dot(dir);
      EXPECT_LE(std::abs(fd - an) / std::max(std::abs(an), 1e-2), 1e-6);
    }
  }
}

TEST(Policy, SamplingDeterministic) {
  Policy p = tabular(4, 3);
  p.set_theta(random_theta(p.dimension(), 3));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng a(seed), b(seed);
    Generation ga = sample_generation(p, kPrompt, a);
    Generation gb = sample_generation(p, kPrompt, b);
    EXPECT_EQ(ga.tokens, gb.tokens);
    EXPECT_EQ(ga.logprobs, gb.logprobs);
  }
}

TEST(Policy, SampledLogprobsMatchScoring) {
  Policy p = tabular(4, 3, 3);
  p.set_theta(random_theta(p.dimension(), 9));
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    Generation g = sample_generation(p, kPrompt, rng);
    EXPECT_EQ(g.logprobs, token_logprobs(p, kPrompt, g.tokens));
    EXPECT_DOUBLE_EQ(g.total_logprob(), sequence_logprob(p, kPrompt, g.tokens));
  }
}

TEST(Policy, SamplingFrequencyUniform) {
  Policy p = tabular(2, 1);
  Rng rng(2024);
  int count_a = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) count_a += sample_generation(p, kPrompt, rng).tokens[0] == 0;
  EXPECT_NEAR(static_cast<double>(count_a) / n, 0.5, 0.015);
}

TEST(Policy, SamplingMatchesEnumeration) {
  Policy p = tabular(3, 2);
  p.set_theta(random_theta(p.dimension(), 21));
  std::map<TokenSeq, int> counts;
  Rng rng(99);
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++counts[sample_generation(p, kPrompt, rng).tokens];
  for (const auto& out : enumerate_outputs(p, kPrompt)) {
    const double f = static_cast<double>(counts[out.tokens]) / n;
    const double sigma = std::sqrt(out.probability * (1 - out.probability) / n);
    EXPECT_NEAR(f, out.probability, 4 * sigma + 1e-12);
  }
}

TEST(Policy, EosTerminatesGeneration) {
  Policy p = tabular(3, 4, 2);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.dimension()));
  p.set_theta(theta);
  Rng rng(5);
  int terminated = 0;
  for (int i = 0; i < 500; ++i) {
    Generation g = sample_generation(p, kPrompt, rng);
    for (std::size_t k = 0; k < g.tokens.size(); ++k) {
      if (g.tokens[k] == 2) {
        EXPECT_EQ(g.tokens.size(), k + 1);
        ++terminated;
      }
    }
  }
  EXPECT_GT(terminated, 0);
}

TEST(Policy, EnumerationCounts) {
  Policy p = tabular(2, 3);
  auto outs = enumerate_outputs(p, kPrompt);
  EXPECT_EQ(outs.size(), 8u);
  double total = 0;
  for (const auto& o : outs) total += o.probability;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Policy, EnumerationWithEos) {
  Policy p = tabular(2, 3, 1);
  p.set_theta(random_theta(p.dimension(), 8));
  auto outs = enumerate_outputs(p, kPrompt);
  // {1}, {0,1}, {0,0,1}, {0,0,0}
  EXPECT_EQ(outs.size(), 4u);
  double total = 0;
  bool has_len1 = false, has_len3 = false;
  for (const auto& o : outs) {
    total += o.probability;
    has_len1 |= o.tokens.size() == 1;
    has_len3 |= o.tokens.size() == 3;
  }
  EXPECT_TRUE(has_len1 && has_len3);
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Policy, EnumerationCapRaises) {
  Policy p = tabular(10, 4);
  EXPECT_THROW(enumerate_outputs(p, kPrompt, 1000), CapacityError);
  EXPECT_NO_THROW(enumerate_outputs(p, kPrompt, 10000));
}

TEST(Policy, SetThetaChecksLength) {
  Policy p = tabular(2, 2);
  EXPECT_THROW(p.set_theta(Eigen::VectorXd::Zero(3)), LengthError);
}

TEST(Policy, DeriveSeedSeparatesStreams) {
  EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(2, 2, 3));
}

}  // namespace
