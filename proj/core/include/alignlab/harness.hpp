#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "alignlab/config.hpp"
#include "alignlab/evaluation.hpp"
#include "alignlab/pipeline.hpp"

namespace alignlab {

inline constexpr std::string_view kArtifactVersion = "alignlab-0.1.0";
inline constexpr const char* kOutputRootEnv = "ALIGNLAB_OUT";

// $ALIGNLAB_OUT, or ./alignlab_out when unset.
std::filesystem::path output_root();

// Directory a run with this config writes into: <root>/run-<confighash>.
std::filesystem::path run_directory(const std::filesystem::path& root, const RunConfig& cfg);

// Trains and writes manifest.json, metrics.jsonl, validation.jsonl,
// rollouts.jsonl, validation_set.jsonl, test_set.jsonl, checkpoints/,
// selection.jsonl and best.txt. validation.jsonl is streamed during training;
// selection.jsonl holds the final scores, normalized across all checkpoints. Returns the process exit code:
// 0 success, 2 invalid config, 3 divergence, 1 anything else.
int cmd_train(const std::string& config_path, const std::filesystem::path& root,
              std::ostream& out, std::ostream& err);

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;  // JSON Lines of PromptRecord
  int n = 50;
  double temperature = 0.6;
  double top_p = 0.9;
  int max_len = 64;
  std::uint64_t seed = 0;
  ScriptedRewardSpec reward;
};

// Throws IncompatibleCheckpointError when the checkpoint's vocabulary does not
// cover the dataset tokens.
EvalReport cmd_eval(const EvalArgs& args);
std::string eval_report_json(const EvalReport& report);

enum class SweepAxis { kS, kN, kAlgo };
std::optional<SweepAxis> parse_axis(std::string_view text);

struct SweepSetting {
  std::string label;
  std::vector<std::pair<std::string, std::string>> overrides;
};
std::vector<SweepSetting> sweep_settings(SweepAxis axis);

struct SweepCell {
  std::string setting;
  int repeat = 0;
  std::optional<double> final_score;
  std::optional<double> best_score;
  std::string error;  // non-empty marks the cell incomplete
};

struct SweepTable {
  SweepAxis axis = SweepAxis::kS;
  int repeats = 0;
  std::vector<std::string> settings;
  std::vector<SweepCell> cells;  // settings.size() * repeats, row major

  bool complete() const;
  std::string to_csv() const;
  std::string to_markdown() const;
};

using RunFunction = std::function<TrainingResult(const RunConfig&)>;

// Repeat r of every setting runs with seed = base.seed + r. Up to `jobs` runs
// execute at once; results do not depend on `jobs`.
SweepTable cmd_sweep(const RunConfig& base, SweepAxis axis, int repeats, int jobs = 1,
                     const RunFunction& run = {});

struct GradcheckRow {
  std::string objective;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  bool pass = true;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  bool pass = true;
  bool vacuous = false;  // no instances were checked

  std::string to_text() const;
};

struct GradcheckOptions {
  std::uint64_t seed = 0;
  int instances = 20;
  double tolerance = 1e-4;
  double step = 1e-5;
  ModelShape shape{11, 4, 3, 8};
  // Applied to each analytic gradient before comparison (test fixtures use it
  // as a negative control).
  std::function<void(std::string_view objective, ParamVector& grad)> perturb;
};

inline const std::vector<std::string>& gradcheck_objectives() {
  static const std::vector<std::string> names = {
      "dpo", "grpo", "ppo_token", "group_dpo", "combined", "nll", "entropy_reg"};
  return names;
}

GradcheckReport cmd_gradcheck(const GradcheckOptions& options);

struct ReportSummary {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> warnings;
  std::size_t runs = 0;
};

// Overlays entropy, length and validation curves of every run directory with
// a metrics file; others are skipped with a warning.
ReportSummary cmd_report(const std::vector<std::filesystem::path>& run_dirs,
                         const std::filesystem::path& out_dir);

}  // namespace alignlab
