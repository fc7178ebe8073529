#include "rapid/config.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include "rapid/errors.hpp"

namespace rapid {

namespace {

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "task.name",          "task.vocab",         "task.prompts",        "task.max_len",
      "task.bits",          "task.seed",          "task.features",       "train.algorithm",
      "train.N_inference",  "train.N_group",      "train.N_step",        "train.H",
      "train.T",            "train.steps",        "train.lr",            "train.optimizer",
      "train.momentum",     "train.eta",          "train.clip_mode",     "train.clip_leading",
      "train.leave_one_out", "train.importance_weighting", "train.beta_kl", "train.seed",
      "train.minibatch",    "train.workers",      "metrics.oracle_every", "metrics.metrics_every",
      "metrics.checkpoint_every", "metrics.a_inf", "metrics.b_inf",       "metrics.a_bp",
      "metrics.b_bp",       "output.out"};
  return keys;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool is_known(const std::string& key) {
  for (const auto& k : known_keys()) {
    if (k == key) return true;
  }
  return false;
}

// Maps a bare or qualified key to its canonical "section.key".
std::string canonical_key(const std::string& key, const std::string& origin) {
  if (key.find('.') != std::string::npos) {
    if (!is_known(key)) throw ConfigError(origin + ": unknown key '" + key + "'");
    return key;
  }
  if (key == "seed") return "train.seed";
  std::string found;
  for (const auto& k : known_keys()) {
    if (k.substr(k.find('.') + 1) == key) {
      if (!found.empty()) throw ConfigError(origin + ": ambiguous key '" + key + "'");
      found = k;
    }
  }
  if (found.empty()) throw ConfigError(origin + ": unknown key '" + key + "'");
  return found;
}

class Reader {
 public:
  explicit Reader(const ConfigSource& src) : src_(src) {}

  const ConfigSource::Entry* find(const std::string& key) const {
    auto it = src_.entries().find(key);
    return it == src_.entries().end() ? nullptr : &it->second;
  }

  std::string origin(const std::string& key) const {
    const auto* e = find(key);
    return e ? e->origin : "default";
  }

  void str(const std::string& key, std::string& out) const {
    if (const auto* e = find(key)) out = e->value;
  }

  template <typename Int>
  void integer(const std::string& key, Int& out) const {
    const auto* e = find(key);
    if (!e) return;
    Int v{};
    auto res = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
    if (res.ec != std::errc() || res.ptr != e->value.data() + e->value.size()) {
      throw ConfigError(e->origin + ": " + key + " expects an integer, got '" + e->value + "'");
    }
    out = v;
  }

  void real(const std::string& key, double& out) const {
    const auto* e = find(key);
    if (!e) return;
    if (e->value == "inf" || e->value == "infinity") {
      out = std::numeric_limits<double>::infinity();
      return;
    }
    double v = 0.0;
    auto res = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
    if (res.ec != std::errc() || res.ptr != e->value.data() + e->value.size()) {
      throw ConfigError(e->origin + ": " + key + " expects a number, got '" + e->value + "'");
    }
    out = v;
  }

  void boolean(const std::string& key, bool& out) const {
    const auto* e = find(key);
    if (!e) return;
    if (e->value == "true" || e->value == "1" || e->value == "yes") {
      out = true;
    } else if (e->value == "false" || e->value == "0" || e->value == "no") {
      out = false;
    } else {
      throw ConfigError(e->origin + ": " + key + " expects true or false, got '" + e->value + "'");
    }
  }

  template <typename Enum, typename Parse>
  void enumeration(const std::string& key, Enum& out, Parse parse) const {
    const auto* e = find(key);
    if (!e) return;
    try {
      out = parse(e->value);
    } catch (const ConfigError& err) {
      throw ConfigError(e->origin + ": " + err.what());
    }
  }

 private:
  const ConfigSource& src_;
};

}  // namespace

ConfigSource ConfigSource::parse(const std::string& text, const std::string& origin_name) {
  ConfigSource src;
  std::istringstream is(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string origin = origin_name + ":" + std::to_string(lineno);
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(origin + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ": empty key");
    const std::string qualified =
        section.empty() || key.find('.') != std::string::npos ? key : section + "." + key;
    src.set(canonical_key(qualified, origin), value, origin);
  }
  return src;
}

ConfigSource ConfigSource::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path + ": cannot open config file");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path);
}

void ConfigSource::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("--set " + assignment + ": expected key=value");
  }
  const std::string origin = "--set " + assignment;
  set(canonical_key(trim(assignment.substr(0, eq)), origin), trim(assignment.substr(eq + 1)),
      origin);
}

void ConfigSource::set(const std::string& key, const std::string& value,
                       const std::string& origin) {
  entries_[key] = Entry{value, origin};
}

RunSpec resolve(const ConfigSource& source) {
  const Reader r(source);
  RunSpec spec;
  TrainConfig& t = spec.train;
  t.oracle_every = 1;

  r.str("task.name", spec.task_name);
  r.integer("task.vocab", spec.task.vocab);
  r.integer("task.prompts", spec.task.prompts);
  r.integer("task.max_len", spec.task.max_len);
  r.integer("task.bits", spec.task.bits);
  r.integer("task.seed", spec.task.seed);
  r.str("task.features", spec.features);

  r.enumeration("train.algorithm", t.algorithm, parse_algorithm);
  r.integer("train.N_inference", t.n_inference);
  r.integer("train.N_group", t.n_group);
  r.integer("train.N_step", t.n_step);
  r.integer("train.T", t.outer_steps);
  r.real("train.lr", t.learning_rate);
  r.enumeration("train.optimizer", t.optimizer, parse_optimizer);
  r.real("train.momentum", t.momentum);
  r.real("train.eta", t.clip.eta);
  r.enumeration("train.clip_mode", t.clip.mode, parse_clip_mode);
  r.boolean("train.clip_leading", t.clip_leading);
  r.boolean("train.leave_one_out", t.leave_one_out);
  r.boolean("train.importance_weighting", t.importance_weighting);
  r.real("train.beta_kl", t.beta_kl);
  r.integer("train.seed", t.seed);
  r.enumeration("train.minibatch", t.minibatch, parse_minibatch_order);
  r.integer("train.workers", t.workers);

  r.integer("metrics.oracle_every", t.oracle_every);
  r.integer("metrics.metrics_every", spec.metrics_every);
  r.integer("metrics.checkpoint_every", spec.checkpoint_every);
  r.real("metrics.a_inf", t.cost.a_inf);
  r.real("metrics.b_inf", t.cost.b_inf);
  r.real("metrics.a_bp", t.cost.a_bp);
  r.real("metrics.b_bp", t.cost.b_bp);
  r.str("output.out", spec.out_dir);

  if (t.algorithm == Algorithm::kGrpgOnPolicy) {
    t.n_inference = t.n_step;
  } else if (r.find("train.H")) {
    int h = 0;
    r.integer("train.H", h);
    if (h < 1) throw ConfigError(r.origin("train.H") + ": H must be positive");
    t.n_inference = h * t.n_step;
  }
  if (r.find("train.steps")) {
    int steps = 0;
    r.integer("train.steps", steps);
    const int h = t.n_step > 0 ? t.n_inference / t.n_step : 0;
    if (steps < 1 || h < 1 || steps % h != 0) {
      throw ConfigError(r.origin("train.steps") + ": steps (" + std::to_string(steps) +
                        ") must be a positive multiple of H (" + std::to_string(h) + ")");
    }
    t.outer_steps = steps / h;
  }
  if (spec.metrics_every < 1) {
    throw ConfigError(r.origin("metrics.metrics_every") + ": metrics_every must be >= 1");
  }
  if (spec.checkpoint_every < 0) {
    throw ConfigError(r.origin("metrics.checkpoint_every") + ": checkpoint_every must be >= 0");
  }

  try {
    validate(t);
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    std::string where;
    for (const char* key : {"train.N_inference", "train.H", "train.N_group", "train.N_step"}) {
      if (msg.find(std::string(key).substr(6)) != std::string::npos && r.find(key)) {
        where += (where.empty() ? "" : ", ") + std::string(key) + " at " + r.origin(key);
      }
    }
    throw ConfigError("invalid configuration: " + msg + (where.empty() ? "" : " (" + where + ")"));
  }
  // Surfaces unknown task names and bad task sizes as config errors.
  (void)make_policy(make_task(spec), spec.features);
  return spec;
}

std::string to_config_text(const RunSpec& spec) {
  const TrainConfig& t = spec.train;
  auto num = [](double x) {
    if (x == std::numeric_limits<double>::infinity()) return std::string("inf");
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
  };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  std::ostringstream os;
  os << "[task]\n"
     << "name = " << spec.task_name << '\n'
     << "vocab = " << spec.task.vocab << '\n'
     << "prompts = " << spec.task.prompts << '\n'
     << "max_len = " << spec.task.max_len << '\n'
     << "bits = " << spec.task.bits << '\n'
     << "seed = " << spec.task.seed << '\n';
  if (!spec.features.empty()) os << "features = " << spec.features << '\n';
  os << "\n[train]\n"
     << "algorithm = " << to_string(t.algorithm) << '\n'
     << "N_inference = " << t.n_inference << '\n'
     << "N_group = " << t.n_group << '\n'
     << "N_step = " << t.n_step << '\n'
     << "T = " << t.outer_steps << '\n'
     << "lr = " << num(t.learning_rate) << '\n'
     << "optimizer = " << to_string(t.optimizer) << '\n'
     << "momentum = " << num(t.momentum) << '\n'
     << "eta = " << num(t.clip.eta) << '\n'
     << "clip_mode = " << to_string(t.clip.mode) << '\n'
     << "clip_leading = " << b(t.clip_leading) << '\n'
     << "leave_one_out = " << b(t.leave_one_out) << '\n'
     << "importance_weighting = " << b(t.importance_weighting) << '\n'
     << "beta_kl = " << num(t.beta_kl) << '\n'
     << "seed = " << t.seed << '\n'
     << "minibatch = " << to_string(t.minibatch) << '\n'
     << "workers = " << t.workers << '\n'
     << "\n[metrics]\n"
     << "oracle_every = " << t.oracle_every << '\n'
     << "metrics_every = " << spec.metrics_every << '\n'
     << "checkpoint_every = " << spec.checkpoint_every << '\n'
     << "a_inf = " << num(t.cost.a_inf) << '\n'
     << "b_inf = " << num(t.cost.b_inf) << '\n'
     << "a_bp = " << num(t.cost.a_bp) << '\n'
     << "b_bp = " << num(t.cost.b_bp) << '\n';
  if (!spec.out_dir.empty()) os << "\n[output]\nout = " << spec.out_dir << '\n';
  return os.str();
}

Task make_task(const RunSpec& spec) { return builtin_task(spec.task_name, spec.task); }

}  // namespace rapid
