#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "alignlab/policy.hpp"
#include "alignlab/rewarding.hpp"
#include "alignlab/tasks.hpp"

namespace alignlab {

struct EvalOptions {
  int samples = 50;
  double temperature = 0.6;
  double top_p = 0.9;
  int max_len = 64;
  std::uint64_t seed = 0;
  int threads = 1;
  ScriptedRewardSpec reward;
};

struct ProblemResult {
  std::string id;
  PromptKind kind = PromptKind::kVerifiable;
  double score = 0.0;  // accuracy, or mean scripted reward
  double mean_length = 0.0;
};

struct EvalReport {
  std::vector<ProblemResult> per_problem;
  double mean = 0.0;
  // Spread of the per-sample-index means across the `samples` independent
  // generations. Undefined (and reported as 0) when samples == 1.
  double stderr_mean = 0.0;
  bool stderr_defined = false;
  double mean_length = 0.0;
  int samples = 0;

  double verifiable_accuracy = 0.0;
  double nonverifiable_raw = 0.0;
  double nonverifiable_normalized = 0.0;  // length_normalized_score
  std::size_t verifiable_count = 0;
  std::size_t nonverifiable_count = 0;

  std::vector<RewardRecord> records;  // one per generation
};

// Sample j of problem `id` is drawn with a seed derived from (seed, id, j),
// independent of the policy, so different checkpoints see common random
// numbers.
EvalReport evaluate(const PolicyParams& params, std::span<const PromptRecord> problems,
                    const EvalOptions& options);

}  // namespace alignlab
