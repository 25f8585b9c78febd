#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

#include "alignlab/objectives.hpp"
#include "alignlab/policy.hpp"
#include "alignlab/rewarding.hpp"
#include "alignlab/tasks.hpp"

namespace alignlab {

enum class Algo { kDpo, kGrpo, kGroupDpo, kCombined };
std::string_view to_string(Algo algo);
std::optional<Algo> parse_algo(std::string_view text);

enum class RefSync { kFixed, kFollowGenerator };

struct SyncSchedule {
  std::optional<std::int64_t> s = 1;  // nullopt means never resync (offline)
  RefSync ref_sync = RefSync::kFixed;

  bool offline() const { return !s.has_value(); }
};

enum class TaskKind { kVerifiable, kNonverifiable, kMixed };
std::string_view to_string(TaskKind kind);

struct OptimizerConfig {
  double lr = 1e-3;
  double adam_eps = 1e-4;
  double clip_norm = 1.0;
};

struct WarmStartConfig {
  int steps = 300;
  int batch = 64;
  double lr = 1e-2;
  double accuracy = 0.0;  // share of demonstrations carrying the true answer
  int max_filler = 0;     // filler words in front of a demonstrated answer
};

struct TaskConfig {
  TaskKind kind = TaskKind::kVerifiable;
  double ratio = 2.0 / 3.0;  // verifiable share of each mixed batch
  SplitSizes sizes;
  Difficulty difficulty;
};

struct EvalConfig {
  int samples = 8;
  double temperature = 0.6;
  double top_p = 0.9;
};

// Everything one training run depends on. Loaded from a flat "key = value"
// file whose keys mirror the field paths (e.g. objective.beta_dpo).
struct RunConfig {
  std::uint64_t seed = 0;
  Algo algo = Algo::kDpo;
  std::int64_t max_steps = 0;
  std::int64_t eval_every = 25;
  int batch_size = 32;

  ModelShape model;
  double init_scale = 0.3;
  WarmStartConfig warmstart;

  SyncSchedule schedule;
  ObjectiveConfig objective;
  OptimizerConfig optimizer;

  int n = 8;  // rollouts per prompt
  SamplingParams sampling;
  EvalConfig eval;

  TaskConfig task;
  ScriptedRewardSpec reward;

  int gen_threads = 1;

  // Cross-field checks; throws ConfigError naming the offending key.
  void validate() const;

  // Canonical "key = value" listing, one line per key in sorted order.
  std::string serialize() const;
  std::string hash() const;  // 16 hex digits of FNV-1a over serialize()
};

// Applies "key = value" lines on top of the defaults. Blank lines and lines
// starting with '#' are ignored. Unknown keys, malformed values, and missing
// required keys (seed, algo, max_steps, schedule.s, task.kind) raise
// ConfigError.
RunConfig parse_config(std::istream& in);
RunConfig parse_config_text(std::string_view text);
RunConfig load_config(const std::string& path);

// Applies one override to an existing config (used by sweeps).
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);

}  // namespace alignlab
