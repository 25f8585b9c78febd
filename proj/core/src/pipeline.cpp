#include "alignlab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <thread>

#include "alignlab/error.hpp"
#include "alignlab/rewarding.hpp"

namespace alignlab {

bool should_sync(std::int64_t step, const SyncSchedule& schedule) {
  if (step < 0) throw InvalidInputError("should_sync: negative step");
  if (step == 0) return true;
  return schedule.s.has_value() && step % *schedule.s == 0;
}

std::uint64_t param_hash(const PolicyParams& params) {
  const auto* bytes = reinterpret_cast<const char*>(params.theta.data());
  return fnv1a(std::string_view(bytes, params.theta.size() * sizeof(double)));
}

void SnapshotStore::publish(SnapshotPtr snapshot) {
  if (!snapshot) throw InvalidInputError("publish: null snapshot");
  std::lock_guard lock(mu_);
  if (current_ && snapshot->version <= current_->version) {
    throw InvalidInputError("publish: snapshot version " + std::to_string(snapshot->version) +
                            " does not exceed " + std::to_string(current_->version));
  }
  current_ = std::move(snapshot);
}

SnapshotPtr SnapshotStore::current() const {
  std::lock_guard lock(mu_);
  return current_;
}

OptimizerState OptimizerState::create(std::size_t size, const OptimizerConfig& cfg) {
  OptimizerState s;
  s.m.assign(size, 0.0);
  s.v.assign(size, 0.0);
  s.lr = cfg.lr;
  s.adam_eps = cfg.adam_eps;
  s.clip_norm = cfg.clip_norm;
  return s;
}

double adam_step(OptimizerState& opt, PolicyParams& params, std::span<const double> grad,
                 std::int64_t step) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  if (grad.size() != params.theta.size() || opt.m.size() != grad.size() ||
      opt.v.size() != grad.size()) {
    throw InvalidInputError("adam_step: size mismatch");
  }
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient", step);
  const double scale = norm > opt.clip_norm ? opt.clip_norm / norm : 1.0;

  ++opt.t;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(opt.t));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(opt.t));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double g = grad[i] * scale;
    opt.m[i] = kBeta1 * opt.m[i] + (1.0 - kBeta1) * g;
    opt.v[i] = kBeta2 * opt.v[i] + (1.0 - kBeta2) * g * g;
    const double m_hat = opt.m[i] / c1;
    const double v_hat = opt.v[i] / c2;
    params.theta[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.adam_eps);
  }
  if (!params.all_finite()) throw DivergenceError("non-finite parameters", step);
  return norm;
}

SnapshotPtr publish_snapshot(TrainerState& state, const SyncSchedule& schedule) {
  auto snap = std::make_shared<Snapshot>();
  const SnapshotPtr prev = state.generator.current();
  snap->version = prev && prev->version >= state.step ? prev->version + 1 : state.step;
  snap->created_at_step = state.step;
  snap->params = state.params;
  snap->params.version = snap->version;
  snap->hash = param_hash(snap->params);
  SnapshotPtr published = std::move(snap);
  state.generator.publish(published);
  if (schedule.ref_sync == RefSync::kFollowGenerator) state.reference = published;
  return published;
}

TrainerState make_trainer_state(const PolicyParams& seed_policy, const RunConfig& cfg) {
  TrainerState state;
  state.params = seed_policy;
  state.params.version = 0;
  state.opt = OptimizerState::create(seed_policy.theta.size(), cfg.optimizer);
  state.seed = cfg.seed;
  auto ref = std::make_shared<Snapshot>();
  ref->params = state.params;
  ref->hash = param_hash(ref->params);
  state.reference = std::move(ref);
  return state;
}

std::vector<ResponseGroup> generate_groups(const Snapshot& snapshot,
                                           std::span<const PromptRecord> prompts, int n,
                                           const SamplingParams& sampling, std::uint64_t seed,
                                           int threads) {
  if (n < 1) throw InvalidInputError("generate_groups: n must be >= 1");
  std::vector<ResponseGroup> groups(prompts.size());
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t j = first; j < prompts.size(); j += stride) {
      ResponseGroup& g = groups[j];
      g.prompt = prompts[j].prompt;
      g.rollouts.reserve(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        const std::uint64_t s = derive_seed(
            {seed, static_cast<std::uint64_t>(Stream::kGeneration), fnv1a(prompts[j].id),
             static_cast<std::uint64_t>(snapshot.version), static_cast<std::uint64_t>(i)});
        g.rollouts.push_back(sample_response(snapshot.params, g.prompt, sampling, s));
      }
    }
  };
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), prompts.size());
  if (workers <= 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work, t, workers);
  }
  return groups;
}

void score_group(ResponseGroup& group, const PromptRecord& record,
                 const ScriptedRewardSpec& spec) {
  group.rewards.clear();
  for (const Rollout& r : group.rollouts) {
    if (record.kind == PromptKind::kVerifiable) {
      group.rewards.push_back(verify(r.response, *record.reference).correct ? 1.0 : 0.0);
    } else {
      group.rewards.push_back(scripted_reward(spec, record.prompt, r.response));
    }
  }
}

namespace {

void add_into(ParamVector& dst, const ParamVector& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

bool all_equal(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

// Loss for one prompt's group, or nullopt when the prompt is skipped.
std::optional<LossOutput> prompt_loss(const TrainerState& state, const Snapshot& generator,
                                      ResponseGroup& group, const PromptRecord& record,
                                      const RunConfig& cfg, Engine& pairing) {
  const PolicyParams& ref = state.reference->params;
  const ObjectiveConfig& oc = cfg.objective;
  std::optional<LossOutput> out;
  switch (cfg.algo) {
    case Algo::kDpo: {
      const auto pair = record.kind == PromptKind::kVerifiable
                            ? build_pair_binary(group, pairing)
                            : build_pair_scalar(group);
      if (!pair) return std::nullopt;
      out = dpo_loss(state.params, ref, *pair, oc.beta_dpo);
      out = nll_augment(std::move(*out), state.params, pair->chosen, oc.nll_scale);
      break;
    }
    case Algo::kGrpo: {
      if (all_equal(group.rewards)) return std::nullopt;
      group.advantages = group_advantages(group.rewards);
      out = grpo_loss(state.params, generator.params, ref, group, oc);
      break;
    }
    case Algo::kGroupDpo:
    case Algo::kCombined: {
      if (all_equal(group.rewards)) return std::nullopt;
      group.advantages = group_advantages(group.rewards);
      if (cfg.algo == Algo::kCombined) {
        out = combined_loss(state.params, generator.params, ref, group, oc);
      } else {
        const GroupSplit split = split_by_reward(group);
        out = group_dpo_loss(state.params, ref, split.correct, split.incorrect, oc.beta_dpo);
      }
      break;
    }
  }
  return entropy_regularize(std::move(*out), state.params, group.rollouts, oc.entropy_coeff);
}

}  // namespace

StepOutput train_step(TrainerState& state, std::span<const PromptRecord> prompts,
                      const RunConfig& cfg) {
  if (prompts.empty()) throw InvalidInputError("train_step: no prompts");
  StepOutput result;
  StepDiagnostics& d = result.diagnostics;
  d.step = state.step;
  d.prompt_count = prompts.size();

  // (1) sync
  if (should_sync(state.step, cfg.schedule)) {
    publish_snapshot(state, cfg.schedule);
    d.synced = true;
  }
  const SnapshotPtr generator = state.generator.current();
  d.generator_version = generator->version;

  // (2) generation from the immutable snapshot
  result.groups = generate_groups(*generator, prompts, cfg.n, cfg.sampling, state.seed,
                                  cfg.gen_threads);

  // (3) rewards and rollout statistics
  std::vector<Rollout> all_rollouts;
  double reward_sum = 0.0;
  double length_sum = 0.0;
  for (std::size_t j = 0; j < prompts.size(); ++j) {
    score_group(result.groups[j], prompts[j], cfg.reward);
    for (std::size_t i = 0; i < result.groups[j].rollouts.size(); ++i) {
      reward_sum += result.groups[j].rewards[i];
      length_sum += static_cast<double>(result.groups[j].rollouts[i].response.size());
      all_rollouts.push_back(result.groups[j].rollouts[i]);
    }
  }
  const double total = static_cast<double>(all_rollouts.size());
  d.mean_reward = reward_sum / total;
  d.mean_length = length_sum / total;
  d.mean_entropy = mean_next_token_entropy(generator->params, all_rollouts);

  // (4) + (5) pairs or groups, mean loss over surviving prompts
  ParamVector grad(state.params.theta.size(), 0.0);
  std::size_t used = 0;
  double clip_sum = 0.0;
  std::size_t clip_count = 0;
  for (std::size_t j = 0; j < prompts.size(); ++j) {
    Engine pairing = make_engine(derive_seed({state.seed,
                                              static_cast<std::uint64_t>(Stream::kPairing),
                                              static_cast<std::uint64_t>(state.step), j}));
    const auto out =
        prompt_loss(state, *generator, result.groups[j], prompts[j], cfg, pairing);
    if (!out) {
      ++d.skip_count;
      continue;
    }
    ++used;
    d.loss += out->loss;
    add_into(grad, out->grad);
    if (const auto it = out->diagnostics.find("clip_fraction"); it != out->diagnostics.end()) {
      clip_sum += it->second;
      ++clip_count;
    }
  }

  // (6) one optimizer update, unless every prompt was skipped
  if (used > 0) {
    const double inv = 1.0 / static_cast<double>(used);
    d.loss *= inv;
    for (double& g : grad) g *= inv;
    d.grad_norm = adam_step(state.opt, state.params, grad, state.step);
    d.updated = true;
  }
  if (clip_count > 0) d.clip_fraction = clip_sum / static_cast<double>(clip_count);

  ++state.step;
  state.params.version = state.step;
  return result;
}

std::size_t verifiable_share(double ratio, std::size_t size) {
  const double want = std::ceil(ratio * static_cast<double>(size) - 1e-9);
  return std::min(size, static_cast<std::size_t>(std::max(0.0, want)));
}

BatchStream::BatchStream(std::vector<PromptRecord> verifiable,
                         std::vector<PromptRecord> nonverifiable, double ratio,
                         std::uint64_t seed)
    : ratio_(ratio), seed_(seed) {
  if (verifiable.empty() && nonverifiable.empty()) {
    throw InvalidInputError("BatchStream: no prompts");
  }
  if (!(ratio > 0.0 && ratio <= 1.0)) throw InvalidInputError("BatchStream: ratio outside (0, 1]");
  verifiable_.items = std::move(verifiable);
  nonverifiable_.items = std::move(nonverifiable);
}

PromptRecord BatchStream::draw(Cycle& c, std::uint64_t tag) {
  if (c.pos == c.order.size()) {
    c.order.resize(c.items.size());
    std::iota(c.order.begin(), c.order.end(), std::size_t{0});
    Engine rng = make_engine(
        derive_seed({seed_, static_cast<std::uint64_t>(Stream::kData), tag, c.epoch}));
    for (std::size_t i = c.order.size(); i > 1; --i) {
      std::swap(c.order[i - 1], c.order[uniform_index(rng, i)]);
    }
    c.pos = 0;
    ++c.epoch;
  }
  return c.items[c.order[c.pos++]];
}

std::vector<PromptRecord> BatchStream::next(std::size_t size) {
  std::size_t nv = verifiable_share(ratio_, size);
  if (verifiable_.items.empty()) nv = 0;
  if (nonverifiable_.items.empty()) nv = size;
  std::vector<PromptRecord> batch;
  batch.reserve(size);
  for (std::size_t i = 0; i < nv; ++i) batch.push_back(draw(verifiable_, 1));
  for (std::size_t i = nv; i < size; ++i) batch.push_back(draw(nonverifiable_, 2));
  return batch;
}

std::size_t select_checkpoint(std::span<const CheckpointRecord> records, Selector selector) {
  if (records.empty()) throw InvalidInputError("select_checkpoint: no records");
  std::size_t best = 0;
  auto key = [&](const CheckpointRecord& r) {
    return selector == Selector::kNormalized ? r.score : r.raw_reward;
  };
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (key(records[i]) > key(records[best])) best = i;
  }
  return best;
}

std::vector<PromptRecord> TrainingData::validation() const {
  std::vector<PromptRecord> out = verifiable.validation;
  out.insert(out.end(), nonverifiable.validation.begin(), nonverifiable.validation.end());
  return out;
}

std::vector<PromptRecord> TrainingData::test() const {
  std::vector<PromptRecord> out = verifiable.test;
  out.insert(out.end(), nonverifiable.test.begin(), nonverifiable.test.end());
  return out;
}

TrainingData make_training_data(const RunConfig& cfg) {
  TrainingData data;
  const std::uint64_t base = derive_seed({cfg.seed, static_cast<std::uint64_t>(Stream::kData)});
  if (cfg.task.kind != TaskKind::kNonverifiable) {
    data.verifiable = gen_verifiable(derive_seed({base, 1}), cfg.task.sizes, cfg.task.difficulty);
  }
  if (cfg.task.kind != TaskKind::kVerifiable) {
    data.nonverifiable = gen_nonverifiable(derive_seed({base, 2}), cfg.task.sizes, cfg.reward);
  }
  return data;
}

PolicyParams make_seed_policy(const RunConfig& cfg, const TrainingData& data) {
  PolicyParams params = PolicyParams::random(
      cfg.model, derive_seed({cfg.seed, static_cast<std::uint64_t>(Stream::kInit)}),
      cfg.init_scale);
  std::vector<PromptRecord> pool = data.verifiable.train;
  pool.insert(pool.end(), data.nonverifiable.train.begin(), data.nonverifiable.train.end());
  if (pool.empty() || cfg.warmstart.steps == 0) return params;

  OptimizerConfig oc{cfg.warmstart.lr, cfg.optimizer.adam_eps, cfg.optimizer.clip_norm};
  OptimizerState opt = OptimizerState::create(params.theta.size(), oc);
  Engine rng =
      make_engine(derive_seed({cfg.seed, static_cast<std::uint64_t>(Stream::kWarmStart)}));
  DemoStyle style;
  style.answer_accuracy = cfg.warmstart.accuracy;
  style.max_filler = cfg.warmstart.max_filler;
  const double w = -1.0 / static_cast<double>(cfg.warmstart.batch);
  ParamVector grad(params.theta.size());
  for (int step = 0; step < cfg.warmstart.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int b = 0; b < cfg.warmstart.batch; ++b) {
      const PromptRecord& rec = pool[uniform_index(rng, pool.size())];
      const TokenSeq demo = demonstration(rec, cfg.task.difficulty, style, rng);
      const std::vector<double> weights(demo.size(), w);
      accumulate_log_prob_grad(params, rec.prompt, demo, weights, grad);
    }
    adam_step(opt, params, grad, -1);
  }
  params.version = 0;
  return params;
}

namespace {

double selection_score(TaskKind kind, double accuracy, double normalized) {
  switch (kind) {
    case TaskKind::kVerifiable:
      return accuracy;
    case TaskKind::kNonverifiable:
      return normalized;
    case TaskKind::kMixed:
      break;
  }
  return 0.5 * (accuracy + normalized);
}

}  // namespace

CheckpointRecord score_checkpoint(const PolicyParams& params, std::int64_t step,
                                  const EvalReport& report, TaskKind kind) {
  CheckpointRecord rec;
  rec.step = step;
  rec.params = params;
  rec.raw_reward = report.mean;
  rec.mean_length = report.mean_length;
  rec.verifiable_accuracy = report.verifiable_accuracy;
  rec.nonverifiable_raw = report.nonverifiable_raw;
  rec.nonverifiable_normalized = report.nonverifiable_normalized;
  for (const RewardRecord& r : report.records) {
    if (r.source == RewardSource::kScripted) rec.nonverifiable_records.push_back(r);
  }
  rec.score = selection_score(kind, report.verifiable_accuracy, report.nonverifiable_normalized);
  if (kind == TaskKind::kMixed) {
    rec.raw_reward = 0.5 * (report.verifiable_accuracy + report.nonverifiable_raw);
  }
  return rec;
}

void rescore_checkpoints(std::span<CheckpointRecord> records, TaskKind kind) {
  if (kind == TaskKind::kVerifiable || records.empty()) return;
  std::vector<std::vector<RewardRecord>> sets;
  sets.reserve(records.size());
  for (const CheckpointRecord& r : records) sets.push_back(r.nonverifiable_records);
  const std::vector<double> normalized = pooled_length_normalized_scores(sets);
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].score = selection_score(kind, records[i].verifiable_accuracy, normalized[i]);
  }
}

EvalOptions validation_options(const RunConfig& cfg) {
  EvalOptions o;
  o.samples = cfg.eval.samples;
  o.temperature = cfg.eval.temperature;
  o.top_p = cfg.eval.top_p;
  o.max_len = cfg.sampling.max_len;
  o.seed = cfg.seed;
  o.threads = cfg.gen_threads;
  o.reward = cfg.reward;
  return o;
}

TrainingResult run_training(const RunConfig& cfg, TrainingObserver* observer) {
  cfg.validate();
  const TrainingData data = make_training_data(cfg);
  const std::vector<PromptRecord> validation = data.validation();
  const EvalOptions eval_opts = validation_options(cfg);

  TrainingResult result;
  result.seed_policy = make_seed_policy(cfg, data);
  TrainerState state = make_trainer_state(result.seed_policy, cfg);
  BatchStream stream(data.verifiable.train, data.nonverifiable.train,
                     cfg.task.kind == TaskKind::kMixed ? cfg.task.ratio : 1.0, cfg.seed);

  auto checkpoint = [&] {
    const EvalReport report = evaluate(state.params, validation, eval_opts);
    CheckpointRecord rec = score_checkpoint(state.params, state.step, report, cfg.task.kind);
    // rollout entropy of the validation prompts is not sampled here; reuse the
    // latest training diagnostic
    if (!result.history.empty()) rec.mean_entropy = result.history.back().mean_entropy;
    if (observer) observer->on_checkpoint(rec, report);
    result.checkpoints.push_back(std::move(rec));
  };

  checkpoint();
  while (state.step < cfg.max_steps) {
    const std::vector<PromptRecord> batch = stream.next(static_cast<std::size_t>(cfg.batch_size));
    StepOutput out = train_step(state, batch, cfg);
    result.history.push_back(out.diagnostics);
    if (observer) observer->on_step(out);
    if (state.step % cfg.eval_every == 0 || state.step == cfg.max_steps) checkpoint();
  }
  rescore_checkpoints(result.checkpoints, cfg.task.kind);
  result.best = select_checkpoint(result.checkpoints, Selector::kNormalized);
  result.final_params = state.params;
  return result;
}

}  // namespace alignlab
