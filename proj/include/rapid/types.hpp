#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace rapid {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

// Dense vector aligned with the policy parameters.
using GradientVector = Eigen::VectorXd;

struct Vocab {
  int size = 2;
  std::optional<Token> eos;

  bool contains(Token t) const { return t >= 0 && t < size; }
};

// Throws DomainError if the vocabulary violates its invariants.
void validate(const Vocab& vocab);

struct Prompt {
  int id = 0;
  // Feature-visible label; the policy conditions on it.
  int cls = 0;
  TokenSeq payload;
};

}  // namespace rapid
