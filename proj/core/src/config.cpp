#include "alignlab/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "alignlab/error.hpp"
#include "alignlab/rng.hpp"
#include "alignlab/vocab.hpp"

namespace alignlab {

std::string_view to_string(Algo algo) {
  switch (algo) {
    case Algo::kDpo: return "dpo";
    case Algo::kGrpo: return "grpo";
    case Algo::kGroupDpo: return "group_dpo";
    case Algo::kCombined: return "combined";
  }
  return "?";
}

std::optional<Algo> parse_algo(std::string_view text) {
  for (Algo a : {Algo::kDpo, Algo::kGrpo, Algo::kGroupDpo, Algo::kCombined}) {
    if (text == to_string(a)) return a;
  }
  return std::nullopt;
}

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kVerifiable: return "verifiable";
    case TaskKind::kNonverifiable: return "nonverifiable";
    case TaskKind::kMixed: return "mixed";
  }
  return "?";
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_integer(std::string_view key, std::string_view text) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(std::string(key), "expected an integer, got '" + std::string(text) + "'");
  }
  return v;
}

double parse_real(std::string_view key, std::string_view text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(std::string(key), "expected a number, got '" + std::string(text) + "'");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(std::string(key), "expected true or false");
}

struct Field {
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define ALIGNLAB_INT(expr)                                                         \
  Field {                                                                          \
    [](RunConfig& c, std::string_view k, std::string_view v) {                     \
      c.expr = parse_integer<std::remove_reference_t<decltype(c.expr)>>(k, v);     \
    },                                                                             \
        [](const RunConfig& c) { return std::to_string(c.expr); }                  \
  }

#define ALIGNLAB_REAL(expr)                                                        \
  Field {                                                                          \
    [](RunConfig& c, std::string_view k, std::string_view v) {                     \
      c.expr = parse_real(k, v);                                                   \
    },                                                                             \
        [](const RunConfig& c) { return format_double(c.expr); }                   \
  }

const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> table = {
      {"seed", ALIGNLAB_INT(seed)},
      {"algo",
       {[](RunConfig& c, std::string_view k, std::string_view v) {
          const auto a = parse_algo(v);
          if (!a) throw ConfigError(std::string(k), "unknown algo '" + std::string(v) + "'");
          c.algo = *a;
        },
        [](const RunConfig& c) { return std::string(to_string(c.algo)); }}},
      {"max_steps", ALIGNLAB_INT(max_steps)},
      {"eval_every", ALIGNLAB_INT(eval_every)},
      {"batch_size", ALIGNLAB_INT(batch_size)},
      {"model.vocab", ALIGNLAB_INT(model.vocab)},
      {"model.embed", ALIGNLAB_INT(model.embed)},
      {"model.context", ALIGNLAB_INT(model.context)},
      {"model.hidden", ALIGNLAB_INT(model.hidden)},
      {"model.init_scale", ALIGNLAB_REAL(init_scale)},
      {"warmstart.steps", ALIGNLAB_INT(warmstart.steps)},
      {"warmstart.batch", ALIGNLAB_INT(warmstart.batch)},
      {"warmstart.lr", ALIGNLAB_REAL(warmstart.lr)},
      {"warmstart.accuracy", ALIGNLAB_REAL(warmstart.accuracy)},
      {"warmstart.max_filler", ALIGNLAB_INT(warmstart.max_filler)},
      {"schedule.s",
       {[](RunConfig& c, std::string_view k, std::string_view v) {
          if (v == "inf" || v == "INF" || v == "infinity") {
            c.schedule.s.reset();
          } else {
            c.schedule.s = parse_integer<std::int64_t>(k, v);
          }
        },
        [](const RunConfig& c) {
          return c.schedule.s ? std::to_string(*c.schedule.s) : std::string("inf");
        }}},
      {"schedule.ref_sync",
       {[](RunConfig& c, std::string_view k, std::string_view v) {
          if (v == "fixed") {
            c.schedule.ref_sync = RefSync::kFixed;
          } else if (v == "follow_generator") {
            c.schedule.ref_sync = RefSync::kFollowGenerator;
          } else {
            throw ConfigError(std::string(k), "expected fixed or follow_generator");
          }
        },
        [](const RunConfig& c) {
          return std::string(c.schedule.ref_sync == RefSync::kFixed ? "fixed"
                                                                    : "follow_generator");
        }}},
      {"objective.beta_dpo", ALIGNLAB_REAL(objective.beta_dpo)},
      {"objective.kl_beta", ALIGNLAB_REAL(objective.kl_beta)},
      {"objective.clip_eps", ALIGNLAB_REAL(objective.clip_eps)},
      {"objective.nll_scale", ALIGNLAB_REAL(objective.nll_scale)},
      {"objective.entropy_coeff", ALIGNLAB_REAL(objective.entropy_coeff)},
      {"objective.alpha_grpo", ALIGNLAB_REAL(objective.alpha_grpo)},
      {"optimizer.lr", ALIGNLAB_REAL(optimizer.lr)},
      {"optimizer.adam_eps", ALIGNLAB_REAL(optimizer.adam_eps)},
      {"optimizer.clip_norm", ALIGNLAB_REAL(optimizer.clip_norm)},
      {"sampling.n", ALIGNLAB_INT(n)},
      {"sampling.max_len", ALIGNLAB_INT(sampling.max_len)},
      {"sampling.temp", ALIGNLAB_REAL(sampling.temperature)},
      {"sampling.top_p", ALIGNLAB_REAL(sampling.top_p)},
      {"eval.samples", ALIGNLAB_INT(eval.samples)},
      {"eval.temp", ALIGNLAB_REAL(eval.temperature)},
      {"eval.top_p", ALIGNLAB_REAL(eval.top_p)},
      {"task.kind",
       {[](RunConfig& c, std::string_view k, std::string_view v) {
          if (v == "verifiable") {
            c.task.kind = TaskKind::kVerifiable;
          } else if (v == "nonverifiable") {
            c.task.kind = TaskKind::kNonverifiable;
          } else if (v == "mixed") {
            c.task.kind = TaskKind::kMixed;
          } else {
            throw ConfigError(std::string(k), "expected verifiable, nonverifiable or mixed");
          }
        },
        [](const RunConfig& c) { return std::string(to_string(c.task.kind)); }}},
      {"task.ratio", ALIGNLAB_REAL(task.ratio)},
      {"task.train", ALIGNLAB_INT(task.sizes.train)},
      {"task.validation", ALIGNLAB_INT(task.sizes.validation)},
      {"task.test", ALIGNLAB_INT(task.sizes.test)},
      {"task.modulus", ALIGNLAB_INT(task.difficulty.modulus)},
      {"task.operand_max", ALIGNLAB_INT(task.difficulty.operand_max)},
      {"task.allow_mul",
       {[](RunConfig& c, std::string_view k, std::string_view v) {
          c.task.difficulty.allow_mul = parse_bool(k, v);
        },
        [](const RunConfig& c) {
          return std::string(c.task.difficulty.allow_mul ? "true" : "false");
        }}},
      {"reward.coverage_weight", ALIGNLAB_REAL(reward.coverage_weight)},
      {"reward.completion_weight", ALIGNLAB_REAL(reward.completion_weight)},
      {"reward.gamma", ALIGNLAB_REAL(reward.length_bias_gamma)},
      {"reward.length_cap", ALIGNLAB_INT(reward.length_cap)},
      {"reward.keywords", ALIGNLAB_INT(reward.keywords_per_prompt)},
      {"gen.threads", ALIGNLAB_INT(gen_threads)},
  };
  return table;
}

#undef ALIGNLAB_INT
#undef ALIGNLAB_REAL

constexpr std::string_view kRequired[] = {"seed", "algo", "max_steps", "schedule.s",
                                          "task.kind"};

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

void require(bool ok, const char* key, const std::string& message) {
  if (!ok) throw ConfigError(key, message);
}

}  // namespace

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError(std::string(key), "unknown key");
  it->second.set(cfg, key, value);
}

void RunConfig::validate() const {
  require(max_steps >= 0, "max_steps", "must be >= 0");
  require(eval_every >= 1, "eval_every", "must be >= 1");
  require(batch_size >= 1, "batch_size", "must be >= 1");
  require(model.vocab == vocab::kSize, "model.vocab",
          "task vocabulary needs exactly " + std::to_string(vocab::kSize) + " tokens");
  require(model.embed >= 1, "model.embed", "must be >= 1");
  require(model.context >= 1, "model.context", "must be >= 1");
  require(model.hidden >= 1, "model.hidden", "must be >= 1");
  require(init_scale >= 0.0, "model.init_scale", "must be >= 0");
  require(warmstart.steps >= 0, "warmstart.steps", "must be >= 0");
  require(warmstart.batch >= 1, "warmstart.batch", "must be >= 1");
  require(warmstart.lr > 0.0, "warmstart.lr", "must be > 0");
  require(warmstart.max_filler >= 0, "warmstart.max_filler", "must be >= 0");
  require(warmstart.accuracy >= 0.0 && warmstart.accuracy <= 1.0, "warmstart.accuracy",
          "must lie in [0, 1]");
  require(!schedule.s || *schedule.s >= 1, "schedule.s", "must be >= 1 or inf");
  require(objective.beta_dpo > 0.0, "objective.beta_dpo", "must be > 0");
  require(objective.kl_beta >= 0.0, "objective.kl_beta", "must be >= 0");
  require(objective.clip_eps > 0.0, "objective.clip_eps", "must be > 0");
  require(objective.nll_scale >= 0.0, "objective.nll_scale", "must be >= 0");
  require(objective.alpha_grpo >= 0.0, "objective.alpha_grpo", "must be >= 0");
  require(optimizer.lr > 0.0, "optimizer.lr", "must be > 0");
  require(optimizer.adam_eps > 0.0, "optimizer.adam_eps", "must be > 0");
  require(optimizer.clip_norm > 0.0, "optimizer.clip_norm", "must be > 0");
  require(n >= 2, "sampling.n",
          "groups need at least 2 rollouts per prompt (got " + std::to_string(n) + " for " +
              std::string(to_string(algo)) + ")");
  require(sampling.max_len >= 1, "sampling.max_len", "must be >= 1");
  require(sampling.temperature > 0.0, "sampling.temp", "must be > 0");
  require(sampling.top_p > 0.0 && sampling.top_p <= 1.0, "sampling.top_p", "must lie in (0, 1]");
  require(eval.samples >= 1, "eval.samples", "must be >= 1");
  require(eval.temperature > 0.0, "eval.temp", "must be > 0");
  require(eval.top_p > 0.0 && eval.top_p <= 1.0, "eval.top_p", "must lie in (0, 1]");
  require(task.ratio > 0.0 && task.ratio <= 1.0, "task.ratio", "must lie in (0, 1]");
  require(task.sizes.train >= 1, "task.train", "must be >= 1");
  require(task.sizes.validation >= 1, "task.validation", "must be >= 1");
  require(task.sizes.test >= 1, "task.test", "must be >= 1");
  require(task.difficulty.modulus >= 2 && task.difficulty.modulus <= 99, "task.modulus",
          "must lie in [2, 99]");
  require(task.difficulty.operand_max >= 0 && task.difficulty.operand_max <= 99,
          "task.operand_max", "must lie in [0, 99]");
  require(reward.length_bias_gamma >= 0.0, "reward.gamma", "must be >= 0");
  require(reward.length_cap >= 1, "reward.length_cap", "must be >= 1");
  require(reward.keywords_per_prompt >= 1 && reward.keywords_per_prompt <= vocab::kNumWords,
          "reward.keywords", "must lie in [1, 16]");
  require(gen_threads >= 1, "gen.threads", "must be >= 1");
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [key, field] : fields()) {
    out += key;
    out += " = ";
    out += field.get(*this);
    out += '\n';
  }
  return out;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(serialize())));
  return buf;
}

RunConfig parse_config(std::istream& in) {
  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::string line;
  while (std::getline(in, line)) {
    std::string_view s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(s), "expected 'key = value'");
    }
    const std::string_view key = trim(s.substr(0, eq));
    const std::string_view value = trim(s.substr(eq + 1));
    if (!seen.emplace(key).second) throw ConfigError(std::string(key), "duplicate key");
    if (value.empty()) throw ConfigError(std::string(key), "empty value");
    set_config_value(cfg, key, value);
  }
  for (std::string_view key : kRequired) {
    if (!seen.contains(key)) throw ConfigError(std::string(key), "missing required key");
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_config(in);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read '" + path + "'");
  return parse_config(in);
}

}  // namespace alignlab
