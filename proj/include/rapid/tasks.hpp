#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rapid/policy.hpp"
#include "rapid/types.hpp"

namespace rapid {

using RewardFn = std::function<double(const Prompt&, std::span<const Token>)>;

// A verifiable-reward environment with an enumerable output space. The reward
// is deterministic and bounded in [0, 1].
struct Task {
  std::string name;
  Vocab vocab;
  int max_len = 1;
  // Number of distinct prompt classes exposed to the feature map.
  int num_classes = 1;
  std::vector<Prompt> prompts;
  RewardFn reward_fn;
  // Feature map a policy for this task uses unless told otherwise.
  std::string default_features = "unigram";

  const Prompt& prompt(int id) const;
};

// Checks the prompt id belongs to the task and that tokens are in range.
double reward(const Task& task, const Prompt& prompt, std::span<const Token> tokens);

struct TaskParams {
  int vocab = 8;
  int prompts = 16;
  int max_len = 2;
  // Parity only.
  int bits = 3;
  std::uint64_t seed = 0;
};

// Built-in tasks:
//   LastTokenMatch: reward 1 iff the final token equals the prompt's target.
//   SumMod:        prompt (d1, d2); one output token; reward 1 iff it is (d1+d2) mod vocab.
//   Parity:        prompt is a bits-long binary string; reward 1 iff the token is its parity.
//   Bandit:        single prompt, one token; reward 1 iff token 0 is chosen.
Task builtin_task(const std::string& name, const TaskParams& params);

// A Policy with zero parameters and the named feature map ("bigram",
// "unigram", or "" for the task default).
Policy make_policy(const Task& task, const std::string& features = "");

}  // namespace rapid
