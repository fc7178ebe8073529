#include "rapid/tasks.hpp"

#include <random>

#include "rapid/errors.hpp"

namespace rapid {

const Prompt& Task::prompt(int id) const {
  if (id >= 0 && id < static_cast<int>(prompts.size()) && prompts[id].id == id) return prompts[id];
  for (const auto& p : prompts) {
    if (p.id == id) return p;
  }
  throw LookupError("task '" + name + "' has no prompt with id " + std::to_string(id));
}

double reward(const Task& task, const Prompt& prompt, std::span<const Token> tokens) {
  const Prompt& known = task.prompt(prompt.id);
  for (Token t : tokens) {
    if (!task.vocab.contains(t)) {
      throw DomainError("token " + std::to_string(t) + " outside vocabulary of task '" +
                        task.name + "'");
    }
  }
  return task.reward_fn(known, tokens);
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

Task last_token_match(const TaskParams& p) {
  require(p.vocab >= 2, "LastTokenMatch needs vocab >= 2");
  require(p.prompts >= 1, "LastTokenMatch needs at least one prompt");
  require(p.max_len >= 1, "LastTokenMatch needs max_len >= 1");
  Task task;
  task.name = "LastTokenMatch";
  task.vocab = Vocab{p.vocab, std::nullopt};
  task.max_len = p.max_len;
  task.num_classes = p.vocab;
  task.default_features = "bigram";
  Rng rng(derive_seed(p.seed, 0x4c544dULL));
  std::uniform_int_distribution<int> pick(0, p.vocab - 1);
  for (int i = 0; i < p.prompts; ++i) {
    const Token target = pick(rng);
    task.prompts.push_back(Prompt{i, target, {target}});
  }
  task.reward_fn = [](const Prompt& prompt, std::span<const Token> tokens) {
    return !tokens.empty() && tokens.back() == prompt.payload.at(0) ? 1.0 : 0.0;
  };
  return task;
}

Task sum_mod(const TaskParams& p) {
  require(p.vocab >= 2, "SumMod needs vocab >= 2");
  require(p.prompts >= 1, "SumMod needs at least one prompt");
  Task task;
  task.name = "SumMod";
  task.vocab = Vocab{p.vocab, std::nullopt};
  task.max_len = 1;
  task.num_classes = p.vocab * p.vocab;
  Rng rng(derive_seed(p.seed, 0x53554dULL));
  std::uniform_int_distribution<int> digit(0, p.vocab - 1);
  for (int i = 0; i < p.prompts; ++i) {
    const Token d1 = digit(rng);
    const Token d2 = digit(rng);
    task.prompts.push_back(Prompt{i, d1 * p.vocab + d2, {d1, d2}});
  }
  const int v = p.vocab;
  task.reward_fn = [v](const Prompt& prompt, std::span<const Token> tokens) {
    const int want = (prompt.payload.at(0) + prompt.payload.at(1)) % v;
    return tokens.size() == 1 && tokens[0] == want ? 1.0 : 0.0;
  };
  return task;
}

Task parity(const TaskParams& p) {
  require(p.bits >= 1 && p.bits <= 16, "Parity needs 1 <= bits <= 16");
  Task task;
  task.name = "Parity";
  task.vocab = Vocab{2, std::nullopt};
  task.max_len = 1;
  task.num_classes = 1 << p.bits;
  for (int code = 0; code < (1 << p.bits); ++code) {
    Prompt prompt{code, code, {}};
    for (int b = p.bits - 1; b >= 0; --b) prompt.payload.push_back((code >> b) & 1);
    task.prompts.push_back(std::move(prompt));
  }
  task.reward_fn = [](const Prompt& prompt, std::span<const Token> tokens) {
    int parity = 0;
    for (Token b : prompt.payload) parity ^= b;
    return tokens.size() == 1 && tokens[0] == parity ? 1.0 : 0.0;
  };
  return task;
}

Task bandit(const TaskParams& p) {
  require(p.vocab >= 2, "Bandit needs vocab >= 2");
  Task task;
  task.name = "Bandit";
  task.vocab = Vocab{p.vocab, std::nullopt};
  task.max_len = 1;
  task.num_classes = 1;
  task.prompts.push_back(Prompt{0, 0, {}});
  task.reward_fn = [](const Prompt&, std::span<const Token> tokens) {
    return tokens.size() == 1 && tokens[0] == 0 ? 1.0 : 0.0;
  };
  return task;
}

}  // namespace

Task builtin_task(const std::string& name, const TaskParams& params) {
  if (name == "LastTokenMatch") return last_token_match(params);
  if (name == "SumMod") return sum_mod(params);
  if (name == "Parity") return parity(params);
  if (name == "Bandit") return bandit(params);
  throw ConfigError("unknown task '" + name +
                    "' (expected LastTokenMatch, SumMod, Parity or Bandit)");
}

Policy make_policy(const Task& task, const std::string& features) {
  const std::string kind = features.empty() ? task.default_features : features;
  std::shared_ptr<const FeatureMap> map;
  if (kind == "bigram") {
    map = std::make_shared<BigramFeatures>(task.num_classes, task.vocab.size, task.max_len);
  } else if (kind == "unigram") {
    map = std::make_shared<UnigramFeatures>(task.num_classes, task.vocab.size);
  } else {
    throw ConfigError("unknown feature map '" + kind + "' (expected bigram or unigram)");
  }
  return Policy(std::move(map), task.vocab, task.max_len);
}

}  // namespace rapid
