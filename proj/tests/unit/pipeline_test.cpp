#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "alignlab/error.hpp"
#include "alignlab/pipeline.hpp"
#include "gtest/gtest.h"

namespace alignlab {
namespace {

RunConfig small_config(std::optional<std::int64_t> s = 1) {
  RunConfig cfg;
  cfg.seed = 11;
  cfg.max_steps = 8;
  cfg.eval_every = 4;
  cfg.batch_size = 6;
  cfg.n = 4;
  cfg.warmstart.steps = 20;
  cfg.eval.samples = 2;
  cfg.sampling.max_len = 24;
  cfg.task.sizes = SplitSizes{48, 8, 8};
  cfg.task.kind = TaskKind::kMixed;
  cfg.schedule.s = s;
  return cfg;
}

struct Fixture {
  RunConfig cfg;
  TrainingData data;
  PolicyParams seed_policy;
  BatchStream stream;

  explicit Fixture(RunConfig c)
      : cfg(std::move(c)),
        data(make_training_data(cfg)),
        seed_policy(make_seed_policy(cfg, data)),
        stream(data.verifiable.train, data.nonverifiable.train, cfg.task.ratio, cfg.seed) {}

  std::vector<PromptRecord> batch() { return stream.next(static_cast<std::size_t>(cfg.batch_size)); }
};

TEST(ShouldSync, ScheduleExamples) {
  const SyncSchedule online{1};
  const SyncSchedule semi{10};
  const SyncSchedule offline{std::nullopt};
  for (std::int64_t t = 0; t < 50; ++t) {
    EXPECT_TRUE(should_sync(t, online));
    EXPECT_EQ(should_sync(t, offline), t == 0);
    EXPECT_EQ(should_sync(t, semi), t % 10 == 0);
  }
  EXPECT_FALSE(should_sync(5, semi));
  EXPECT_TRUE(should_sync(20, semi));
  EXPECT_THROW(should_sync(-1, online), InvalidInputError);
  EXPECT_TRUE(offline.offline());
}

TEST(SnapshotStore, RejectsNonIncreasingVersions) {
  SnapshotStore store;
  EXPECT_EQ(store.current(), nullptr);
  auto a = std::make_shared<Snapshot>();
  a->version = 3;
  store.publish(a);
  auto b = std::make_shared<Snapshot>();
  b->version = 3;
  EXPECT_THROW(store.publish(b), InvalidInputError);
  b->version = 2;
  EXPECT_THROW(store.publish(b), InvalidInputError);
  EXPECT_THROW(store.publish(nullptr), InvalidInputError);
  EXPECT_EQ(store.current(), a);
}

TEST(PublishSnapshot, RepeatedPublishCopiesParamsWithIncreasingVersions) {
  Fixture f(small_config());
  TrainerState state = make_trainer_state(f.seed_policy, f.cfg);
  const SnapshotPtr a = publish_snapshot(state, f.cfg.schedule);
  const SnapshotPtr b = publish_snapshot(state, f.cfg.schedule);
  EXPECT_EQ(a->params.theta, b->params.theta);
  EXPECT_LT(a->version, b->version);
  EXPECT_EQ(a->hash, b->hash);
  EXPECT_NE(a.get(), b.get());
}

TEST(PublishSnapshot, SnapshotIsADeepCopy) {
  Fixture f(small_config());
  TrainerState state = make_trainer_state(f.seed_policy, f.cfg);
  const SnapshotPtr snap = publish_snapshot(state, f.cfg.schedule);
  for (int i = 0; i < 5; ++i) train_step(state, f.batch(), f.cfg);
  EXPECT_NE(state.params.theta, snap->params.theta);
  EXPECT_EQ(param_hash(snap->params), snap->hash);
  EXPECT_EQ(snap->params.theta, f.seed_policy.theta);
}

TEST(PublishSnapshot, FixedReferenceNeverChanges) {
  Fixture f(small_config(1));
  TrainerState state = make_trainer_state(f.seed_policy, f.cfg);
  const std::uint64_t h0 = param_hash(state.reference->params);
  for (int i = 0; i < 8; ++i) {
    train_step(state, f.batch(), f.cfg);
    EXPECT_EQ(param_hash(state.reference->params), h0);
  }
  EXPECT_EQ(state.reference->params.theta, f.seed_policy.theta);
}

TEST(PublishSnapshot, FollowGeneratorReferenceAtStepTwenty) {
  RunConfig cfg = small_config(10);
  cfg.schedule.ref_sync = RefSync::kFollowGenerator;
  Fixture f(cfg);
  TrainerState state = make_trainer_state(f.seed_policy, cfg);
  for (int i = 0; i < 20; ++i) train_step(state, f.batch(), cfg);
  const ParamVector at_twenty = state.params.theta;
  const SnapshotPtr ref_before = state.reference;
  train_step(state, f.batch(), cfg);
  EXPECT_EQ(state.reference->params.theta, at_twenty);
  EXPECT_EQ(state.reference->version, 20);
  EXPECT_EQ(state.reference, state.generator.current());
  EXPECT_NE(state.reference, ref_before);
  // no change within the window
  const SnapshotPtr held = state.reference;
  for (int i = 0; i < 5; ++i) train_step(state, f.batch(), cfg);
  EXPECT_EQ(state.reference, held);
}

TEST(AdamStep, ZeroGradientLeavesParamsAndCountsStep) {
  PolicyParams p = PolicyParams::random(ModelShape{11, 4, 3, 8}, 1, 0.3);
  const ParamVector before = p.theta;
  OptimizerState opt = OptimizerState::create(p.theta.size(), OptimizerConfig{});
  adam_step(opt, p, ParamVector(p.theta.size(), 0.0));
  EXPECT_EQ(p.theta, before);
  EXPECT_EQ(opt.t, 1);
}

TEST(AdamStep, ClipsByGlobalNormBeforeMoments) {
  PolicyParams p = PolicyParams::zeros(ModelShape{11, 4, 3, 8});
  OptimizerConfig oc;
  oc.clip_norm = 1.0;
  OptimizerState opt = OptimizerState::create(p.theta.size(), oc);
  ParamVector g(p.theta.size(), 0.0);
  g[0] = 6.0;
  g[1] = 8.0;
  EXPECT_DOUBLE_EQ(adam_step(opt, p, g), 10.0);
  EXPECT_NEAR(opt.m[0], 0.1 * 0.6, 1e-15);
  EXPECT_NEAR(opt.m[1], 0.1 * 0.8, 1e-15);
  EXPECT_NEAR(opt.v[1], 0.001 * 0.64, 1e-15);
}

TEST(AdamStep, SingleParameterFirstUpdate) {
  // one-parameter model: treat only theta[0] as live
  PolicyParams p = PolicyParams::zeros(ModelShape{11, 4, 3, 8});
  OptimizerConfig oc;
  oc.lr = 1e-3;
  oc.adam_eps = 1e-8;
  oc.clip_norm = 1e9;
  OptimizerState opt = OptimizerState::create(p.theta.size(), oc);
  ParamVector g(p.theta.size(), 0.0);
  g[0] = 1.0;
  adam_step(opt, p, g);
  EXPECT_NEAR(p.theta[0], -1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.theta[0], -9.99999e-4, 1e-9);
}

TEST(AdamStep, NonFiniteGradientIsDivergence) {
  PolicyParams p = PolicyParams::zeros(ModelShape{11, 4, 3, 8});
  OptimizerState opt = OptimizerState::create(p.theta.size(), OptimizerConfig{});
  ParamVector g(p.theta.size(), 0.0);
  g[3] = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(opt, p, g, 17);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step(), 17);
  }
  g[3] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(adam_step(opt, p, g), DivergenceError);
}

TEST(TrainStep, OfflineRolloutsComeFromStepZeroSnapshot) {
  Fixture f(small_config(std::nullopt));
  TrainerState state = make_trainer_state(f.seed_policy, f.cfg);
  for (int i = 0; i < 6; ++i) {
    const StepOutput out = train_step(state, f.batch(), f.cfg);
    EXPECT_EQ(out.diagnostics.generator_version, 0);
    EXPECT_EQ(out.diagnostics.synced, i == 0);
    for (const ResponseGroup& g : out.groups) {
      for (const Rollout& r : g.rollouts) EXPECT_EQ(r.gen_version, 0);
    }
  }
}

TEST(TrainStep, SkipsExactlyTheDegenerateGroups) {
  RunConfig cfg = small_config(1);
  cfg.task.kind = TaskKind::kVerifiable;
  Fixture f(cfg);
  TrainerState state = make_trainer_state(f.seed_policy, cfg);
  for (Algo algo : {Algo::kDpo, Algo::kGrpo, Algo::kGroupDpo, Algo::kCombined}) {
    cfg.algo = algo;
    const StepOutput out = train_step(state, f.batch(), cfg);
    std::size_t degenerate = 0;
    for (const ResponseGroup& g : out.groups) {
      bool same = true;
      for (double r : g.rewards) same = same && r == g.rewards[0];
      degenerate += same ? 1 : 0;
    }
    EXPECT_EQ(out.diagnostics.skip_count, degenerate) << to_string(algo);
    EXPECT_EQ(out.diagnostics.updated, degenerate < out.groups.size());
  }
}

TEST(TrainStep, AllSkippedConsumesStepWithoutUpdate) {
  RunConfig cfg = small_config(1);
  cfg.task.kind = TaskKind::kVerifiable;
  cfg.sampling.max_len = 1;  // no room for an answer: every reward is 0
  Fixture f(cfg);
  TrainerState state = make_trainer_state(f.seed_policy, cfg);
  const ParamVector before = state.params.theta;
  const StepOutput out = train_step(state, f.batch(), cfg);
  EXPECT_FALSE(out.diagnostics.updated);
  EXPECT_EQ(out.diagnostics.skip_count, out.diagnostics.prompt_count);
  EXPECT_EQ(state.params.theta, before);
  EXPECT_EQ(state.step, 1);
  EXPECT_EQ(state.opt.t, 0);
}

TEST(TrainStep, RejectsEmptyPromptsAndSingletonGroups) {
  Fixture f(small_config());
  TrainerState state = make_trainer_state(f.seed_policy, f.cfg);
  EXPECT_THROW(train_step(state, std::vector<PromptRecord>{}, f.cfg), InvalidInputError);
  RunConfig cfg = small_config();
  cfg.algo = Algo::kGrpo;
  cfg.n = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(TrainStep, FirstStepIdenticalAcrossSyncIntervals) {
  std::vector<ParamVector> after;
  std::vector<std::uint64_t> hashes;
  for (std::optional<std::int64_t> s :
       {std::optional<std::int64_t>(1), std::optional<std::int64_t>(10), std::optional<std::int64_t>()}) {
    Fixture f(small_config(s));
    TrainerState state = make_trainer_state(f.seed_policy, f.cfg);
    train_step(state, f.batch(), f.cfg);
    after.push_back(state.params.theta);
  }
  EXPECT_EQ(after[0], after[1]);
  EXPECT_EQ(after[1], after[2]);
}

TEST(TrainStep, VersionsAndGroupsAreConsistent) {
  Fixture f(small_config(3));
  TrainerState state = make_trainer_state(f.seed_policy, f.cfg);
  std::int64_t last = -1;
  std::set<std::int64_t> published;
  for (int i = 0; i < 10; ++i) {
    const StepOutput out = train_step(state, f.batch(), f.cfg);
    const std::int64_t v = out.diagnostics.generator_version;
    EXPECT_GE(v, last);
    if (out.diagnostics.synced) {
      EXPECT_TRUE(published.insert(v).second);
      EXPECT_GT(v, last);
    } else {
      EXPECT_EQ(v, last);
    }
    last = v;
    EXPECT_LE(v, state.params.version);
    for (const ResponseGroup& g : out.groups) {
      for (const Rollout& r : g.rollouts) EXPECT_EQ(r.gen_version, v);
    }
  }
  EXPECT_EQ(published, (std::set<std::int64_t>{0, 3, 6, 9}));
}

TEST(TrainStep, ParallelGenerationMatchesSequential) {
  RunConfig seq_cfg = small_config(2);
  RunConfig par_cfg = seq_cfg;
  par_cfg.gen_threads = 4;
  Fixture a(seq_cfg);
  Fixture b(par_cfg);
  TrainerState sa = make_trainer_state(a.seed_policy, seq_cfg);
  TrainerState sb = make_trainer_state(b.seed_policy, par_cfg);
  for (int i = 0; i < 4; ++i) {
    const StepOutput oa = train_step(sa, a.batch(), seq_cfg);
    const StepOutput ob = train_step(sb, b.batch(), par_cfg);
    ASSERT_EQ(oa.groups.size(), ob.groups.size());
    for (std::size_t j = 0; j < oa.groups.size(); ++j) {
      EXPECT_EQ(oa.groups[j].rollouts, ob.groups[j].rollouts);
      EXPECT_EQ(oa.groups[j].rewards, ob.groups[j].rewards);
    }
  }
  EXPECT_EQ(sa.params.theta, sb.params.theta);
}

TEST(GenerateGroups, SameSnapshotSameRolloutsRegardlessOfBatchPosition) {
  Fixture f(small_config());
  Snapshot snap;
  snap.params = f.seed_policy;
  std::vector<PromptRecord> prompts(f.data.verifiable.train.begin(), f.data.verifiable.train.begin() + 5);
  const auto fwd = generate_groups(snap, prompts, 3, SamplingParams{}, 4, 1);
  std::reverse(prompts.begin(), prompts.end());
  const auto rev = generate_groups(snap, prompts, 3, SamplingParams{}, 4, 3);
  for (std::size_t j = 0; j < fwd.size(); ++j) EXPECT_EQ(fwd[j].rollouts, rev[fwd.size() - 1 - j].rollouts);
}

TEST(MixBatches, CeilingSplitAndPurePopulations) {
  EXPECT_EQ(verifiable_share(2.0 / 3.0, 32), 22u);
  EXPECT_EQ(verifiable_share(1.0, 32), 32u);
  EXPECT_EQ(verifiable_share(0.5, 7), 4u);
  Fixture f(small_config());
  BatchStream mixed(f.data.verifiable.train, f.data.nonverifiable.train, 2.0 / 3.0, 3);
  const auto batch = mixed.next(32);
  std::size_t v = 0;
  for (const PromptRecord& r : batch) v += r.kind == PromptKind::kVerifiable ? 1 : 0;
  EXPECT_EQ(v, 22u);
  for (std::size_t i = 0; i < 22; ++i) EXPECT_EQ(batch[i].kind, PromptKind::kVerifiable);
  BatchStream pure(f.data.verifiable.train, f.data.nonverifiable.train, 1.0, 3);
  for (const PromptRecord& r : pure.next(32)) EXPECT_EQ(r.kind, PromptKind::kVerifiable);
  EXPECT_THROW(BatchStream(f.data.verifiable.train, {}, 0.0, 1), InvalidInputError);
}

TEST(MixBatches, CyclesThroughEveryPromptEachEpoch) {
  Fixture f(small_config());
  const auto& train = f.data.verifiable.train;
  BatchStream stream(train, {}, 1.0, 5);
  std::vector<std::string> first_epoch;
  std::vector<std::string> second_epoch;
  for (std::size_t i = 0; i < train.size(); ++i) first_epoch.push_back(stream.next(1)[0].id);
  for (std::size_t i = 0; i < train.size(); ++i) second_epoch.push_back(stream.next(1)[0].id);
  EXPECT_EQ(std::set<std::string>(first_epoch.begin(), first_epoch.end()).size(), train.size());
  EXPECT_EQ(std::set<std::string>(second_epoch.begin(), second_epoch.end()).size(), train.size());
  EXPECT_NE(first_epoch, second_epoch);
}

TEST(Checkpoints, MixedScoreIsMeanOfTheTwoScores) {
  EvalReport report;
  report.mean = 0.4;
  report.verifiable_accuracy = 0.6;
  report.nonverifiable_raw = 0.9;
  report.nonverifiable_normalized = 0.3;
  const PolicyParams p = PolicyParams::zeros(ModelShape{11, 4, 3, 8});
  EXPECT_DOUBLE_EQ(score_checkpoint(p, 0, report, TaskKind::kMixed).score, 0.45);
  EXPECT_DOUBLE_EQ(score_checkpoint(p, 0, report, TaskKind::kVerifiable).score, 0.6);
  EXPECT_DOUBLE_EQ(score_checkpoint(p, 0, report, TaskKind::kNonverifiable).score, 0.3);
}

TEST(Checkpoints, SelectorsPickTheirOwnMaximum) {
  std::vector<CheckpointRecord> records(4);
  const double score[] = {0.2, 0.5, 0.4, 0.5};
  const double raw[] = {0.3, 0.6, 0.9, 0.7};
  for (std::size_t i = 0; i < 4; ++i) {
    records[i].step = static_cast<std::int64_t>(i);
    records[i].score = score[i];
    records[i].raw_reward = raw[i];
  }
  EXPECT_EQ(select_checkpoint(records, Selector::kNormalized), 1u);
  EXPECT_EQ(select_checkpoint(records, Selector::kRaw), 2u);
  EXPECT_THROW(select_checkpoint(std::vector<CheckpointRecord>{}, Selector::kRaw), InvalidInputError);
}

std::vector<RewardRecord> constant_length_records(std::size_t length, double quality) {
  const double bias = static_cast<double>(length) / 64.0;
  return {RewardRecord{"p", 0, quality - 0.1 + bias, RewardSource::kScripted, length},
          RewardRecord{"p", 1, quality + 0.1 + bias, RewardSource::kScripted, length}};
}

TEST(Checkpoints, RescoringUsesOneSlopeAcrossCheckpoints) {
  // lengths saturate per checkpoint, the longest one has the most raw reward
  const std::size_t lengths[] = {10, 20, 64};
  const double quality[] = {0.7, 0.7, 0.6};
  std::vector<CheckpointRecord> records(3);
  for (std::size_t i = 0; i < 3; ++i) {
    records[i].nonverifiable_records = constant_length_records(lengths[i], quality[i]);
    records[i].verifiable_accuracy = 0.5;
    records[i].mean_length = static_cast<double>(lengths[i]);
    records[i].raw_reward = quality[i] + static_cast<double>(lengths[i]) / 64.0;
    records[i].nonverifiable_normalized = length_normalized_score(records[i].nonverifiable_records);
    records[i].score = records[i].nonverifiable_normalized;
  }
  EXPECT_EQ(select_checkpoint(records, Selector::kNormalized), 2u);
  EXPECT_EQ(select_checkpoint(records, Selector::kRaw), 2u);

  std::vector<CheckpointRecord> verifiable = records;
  rescore_checkpoints(verifiable, TaskKind::kVerifiable);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(verifiable[i].score, records[i].score);

  std::vector<CheckpointRecord> mixed = records;
  rescore_checkpoints(records, TaskKind::kNonverifiable);
  rescore_checkpoints(mixed, TaskKind::kMixed);
  const double slope = (0.3 * 64.0 / 3.0 + 0.14375 * 34.0 / 3.0 + 0.44375 * 98.0 / 3.0) /
                       ((64.0 * 64.0 + 34.0 * 34.0 + 98.0 * 98.0) / 9.0);
  for (std::size_t i = 0; i < 3; ++i) {
    const double expected = records[i].raw_reward - slope * static_cast<double>(lengths[i]);
    EXPECT_NEAR(records[i].score, expected, 1e-12);
    EXPECT_EQ(records[i].nonverifiable_normalized,
              length_normalized_score(records[i].nonverifiable_records));
    EXPECT_NEAR(mixed[i].score, 0.5 * (0.5 + expected), 1e-12);
  }
  EXPECT_EQ(select_checkpoint(records, Selector::kNormalized), 1u);
  EXPECT_EQ(select_checkpoint(records, Selector::kRaw), 2u);
}

TEST(RunTraining, ZeroStepsSelectsTheSeedCheckpoint) {
  RunConfig cfg = small_config();
  cfg.max_steps = 0;
  const TrainingResult r = run_training(cfg);
  EXPECT_TRUE(r.history.empty());
  ASSERT_EQ(r.checkpoints.size(), 1u);
  EXPECT_EQ(r.best, 0u);
  EXPECT_EQ(r.best_record().step, 0);
  EXPECT_EQ(r.best_record().params.theta, r.seed_policy.theta);
  EXPECT_EQ(r.final_params.theta, r.seed_policy.theta);
}

TEST(RunTraining, SameConfigAndSeedAreBitIdentical) {
  const RunConfig cfg = small_config(3);
  const TrainingResult a = run_training(cfg);
  const TrainingResult b = run_training(cfg);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].loss, b.history[i].loss);
    EXPECT_EQ(a.history[i].mean_reward, b.history[i].mean_reward);
    EXPECT_EQ(a.history[i].mean_entropy, b.history[i].mean_entropy);
    EXPECT_EQ(a.history[i].grad_norm, b.history[i].grad_norm);
  }
  EXPECT_EQ(a.final_params.theta, b.final_params.theta);
  EXPECT_EQ(a.best, b.best);
  RunConfig other = cfg;
  other.seed = 12;
  EXPECT_NE(run_training(other).final_params.theta, a.final_params.theta);
}

TEST(RunTraining, CheckpointScheduleAndSelection) {
  RunConfig cfg = small_config(1);
  cfg.max_steps = 10;
  cfg.eval_every = 4;
  const TrainingResult r = run_training(cfg);
  std::vector<std::int64_t> steps;
  for (const CheckpointRecord& c : r.checkpoints) steps.push_back(c.step);
  EXPECT_EQ(steps, (std::vector<std::int64_t>{0, 4, 8, 10}));
  EXPECT_EQ(r.history.size(), 10u);
  EXPECT_EQ(r.best, select_checkpoint(r.checkpoints, Selector::kNormalized));
}

}  // namespace
}  // namespace alignlab
