#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "alignlab/config.hpp"
#include "alignlab/evaluation.hpp"
#include "alignlab/objectives.hpp"
#include "alignlab/policy.hpp"
#include "alignlab/rng.hpp"
#include "alignlab/tasks.hpp"

namespace alignlab {

// Sync happens before generating the step's rollouts: at step 0 always, and
// at every multiple of s when s is finite.
bool should_sync(std::int64_t step, const SyncSchedule& schedule);

// FNV-1a over the raw bytes of theta.
std::uint64_t param_hash(const PolicyParams& params);

struct Snapshot {
  PolicyParams params;
  std::int64_t version = 0;
  std::int64_t created_at_step = 0;
  std::uint64_t hash = 0;  // param_hash at publication
};

using SnapshotPtr = std::shared_ptr<const Snapshot>;

// Holds the currently published snapshot. Publication swaps a pointer under a
// mutex, so readers either see the old snapshot or the new one in full.
class SnapshotStore {
 public:
  SnapshotStore() = default;
  SnapshotStore(SnapshotStore&& other) noexcept : current_(other.current()) {}
  SnapshotStore& operator=(SnapshotStore&& other) noexcept {
    SnapshotPtr p = other.current();
    std::lock_guard lock(mu_);
    current_ = std::move(p);
    return *this;
  }

  // Throws InvalidInputError unless the version is larger than the current one.
  void publish(SnapshotPtr snapshot);
  SnapshotPtr current() const;

 private:
  mutable std::mutex mu_;
  SnapshotPtr current_;
};

struct OptimizerState {
  ParamVector m;
  ParamVector v;
  std::int64_t t = 0;
  double lr = 1e-3;
  double adam_eps = 1e-4;
  double clip_norm = 1.0;

  static OptimizerState create(std::size_t size, const OptimizerConfig& cfg);
};

// Global-norm clipping, then Adam (beta1 0.9, beta2 0.999) with eps added to
// sqrt(v_hat). Returns the gradient norm before clipping. Non-finite gradients
// raise DivergenceError carrying `step`.
double adam_step(OptimizerState& opt, PolicyParams& params,
                 std::span<const double> grad, std::int64_t step = 0);

struct TrainerState {
  PolicyParams params;
  SnapshotStore generator;
  SnapshotPtr reference;
  OptimizerState opt;
  std::int64_t step = 0;
  std::uint64_t seed = 0;  // master seed; per-step streams are derived from it
};

// Deep copy of the live parameters with version = step (or one past the last
// published version when nothing has advanced). With follow_generator the
// reference is replaced by the same snapshot.
SnapshotPtr publish_snapshot(TrainerState& state, const SyncSchedule& schedule);

TrainerState make_trainer_state(const PolicyParams& seed_policy, const RunConfig& cfg);

struct StepDiagnostics {
  std::int64_t step = 0;
  double loss = 0.0;
  double mean_reward = 0.0;
  double mean_length = 0.0;
  double mean_entropy = 0.0;  // under the generating snapshot
  double clip_fraction = 0.0;
  std::size_t skip_count = 0;
  std::size_t prompt_count = 0;
  std::int64_t generator_version = 0;
  double grad_norm = 0.0;
  bool updated = false;
  bool synced = false;
};

// One group of rollouts per prompt, all drawn from `snapshot`. Rollout i of
// the prompt with id `id` uses a seed derived from (seed, id, snapshot
// version, i), so the result is the same however the work is scheduled.
std::vector<ResponseGroup> generate_groups(const Snapshot& snapshot,
                                           std::span<const PromptRecord> prompts,
                                           int n, const SamplingParams& sampling,
                                           std::uint64_t seed, int threads);

// Fills group.rewards from the verifier or the scripted reward.
void score_group(ResponseGroup& group, const PromptRecord& record,
                 const ScriptedRewardSpec& spec);

struct StepOutput {
  StepDiagnostics diagnostics;
  std::vector<ResponseGroup> groups;
};

StepOutput train_step(TrainerState& state, std::span<const PromptRecord> prompts,
                      const RunConfig& cfg);

// Cycles through the training prompts of each population, reshuffling with a
// seeded permutation at every epoch.
class BatchStream {
 public:
  BatchStream(std::vector<PromptRecord> verifiable,
              std::vector<PromptRecord> nonverifiable, double ratio,
              std::uint64_t seed);

  // ceil(ratio * size) verifiable prompts followed by nonverifiable ones;
  // a population that is empty hands its share to the other.
  std::vector<PromptRecord> next(std::size_t size);

 private:
  struct Cycle {
    std::vector<PromptRecord> items;
    std::vector<std::size_t> order;
    std::size_t pos = 0;
    std::uint64_t epoch = 0;
  };
  PromptRecord draw(Cycle& cycle, std::uint64_t tag);

  Cycle verifiable_;
  Cycle nonverifiable_;
  double ratio_;
  std::uint64_t seed_;
};

// Number of verifiable prompts in a mixed batch of `size`.
std::size_t verifiable_share(double ratio, std::size_t size);

struct CheckpointRecord {
  std::int64_t step = 0;
  PolicyParams params;
  double score = 0.0;  // the selection score
  double raw_reward = 0.0;
  double mean_length = 0.0;
  double mean_entropy = 0.0;
  double verifiable_accuracy = 0.0;
  double nonverifiable_raw = 0.0;
  double nonverifiable_normalized = 0.0;
  std::vector<RewardRecord> nonverifiable_records;
};

// Recomputes the selection score of every checkpoint with one length slope
// fitted over the non-verifiable validation records of all of them.
// nonverifiable_normalized keeps the checkpoint's own length_normalized_score.
void rescore_checkpoints(std::span<CheckpointRecord> records, TaskKind kind);

enum class Selector { kNormalized, kRaw };
std::size_t select_checkpoint(std::span<const CheckpointRecord> records, Selector selector);

struct TrainingData {
  DatasetSplit verifiable;
  DatasetSplit nonverifiable;

  std::vector<PromptRecord> validation() const;
  std::vector<PromptRecord> test() const;
};

TrainingData make_training_data(const RunConfig& cfg);

// Random init followed by supervised warm-up on template demonstrations.
PolicyParams make_seed_policy(const RunConfig& cfg, const TrainingData& data);

struct TrainingObserver {
  virtual ~TrainingObserver() = default;
  virtual void on_step(const StepOutput& /*out*/) {}
  virtual void on_checkpoint(const CheckpointRecord& /*record*/,
                             const EvalReport& /*report*/) {}
};

struct TrainingResult {
  std::vector<StepDiagnostics> history;
  std::vector<CheckpointRecord> checkpoints;
  std::size_t best = 0;
  PolicyParams seed_policy;
  PolicyParams final_params;

  const CheckpointRecord& best_record() const { return checkpoints[best]; }
};

CheckpointRecord score_checkpoint(const PolicyParams& params, std::int64_t step,
                                  const EvalReport& report, TaskKind kind);

EvalOptions validation_options(const RunConfig& cfg);

TrainingResult run_training(const RunConfig& cfg, TrainingObserver* observer = nullptr);

}  // namespace alignlab
