#include "alignlab/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "alignlab/error.hpp"

namespace alignlab {

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void add_scaled(ParamVector& dst, const ParamVector& src, double scale) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

void accumulate_sequence(const PolicyParams& params, const Rollout& r,
                         double weight, ParamVector& grad) {
  if (weight == 0.0) return;
  const std::vector<double> w(r.response.size(), weight);
  accumulate_log_prob_grad(params, r.prompt, r.response, w, grad);
}

// log pi - log pi_ref for one response.
double log_ratio_to_ref(const PolicyParams& params, const PolicyParams& ref,
                        const Rollout& r) {
  return log_prob(params, r.prompt, r.response).total -
         log_prob(ref, r.prompt, r.response).total;
}

void require_shared_prompt(const TokenSeq& prompt, const Rollout& r) {
  if (r.prompt != prompt) {
    throw InvalidInputError("rollout prompt differs from its pair/group prompt");
  }
}

// Shared implementation of DPO over a set of chosen/rejected responses: the
// loss is the mean over all |chosen| * |rejected| pairs. Each sequence's
// log-probability gradient is evaluated once with its aggregated weight.
LossOutput pairwise_dpo(const PolicyParams& params, const PolicyParams& ref,
                        std::span<const Rollout> chosen,
                        std::span<const Rollout> rejected, double beta) {
  if (!(beta > 0.0)) throw InvalidInputError("dpo beta must be positive");
  std::vector<double> chosen_delta;
  std::vector<double> rejected_delta;
  chosen_delta.reserve(chosen.size());
  rejected_delta.reserve(rejected.size());
  for (const Rollout& r : chosen) {
    chosen_delta.push_back(log_ratio_to_ref(params, ref, r));
  }
  for (const Rollout& r : rejected) {
    rejected_delta.push_back(log_ratio_to_ref(params, ref, r));
  }

  const double pairs = static_cast<double>(chosen.size() * rejected.size());
  std::vector<double> chosen_w(chosen.size(), 0.0);
  std::vector<double> rejected_w(rejected.size(), 0.0);
  double loss = 0.0;
  double margin_sum = 0.0;
  for (std::size_t c = 0; c < chosen.size(); ++c) {
    for (std::size_t r = 0; r < rejected.size(); ++r) {
      const double margin =
          beta * chosen_delta[c] - beta * rejected_delta[r];
      loss += softplus(-margin);
      margin_sum += margin;
      // d/dmargin of -log sigmoid(margin)
      const double coef = -sigmoid(-margin) * beta;
      chosen_w[c] += coef;
      rejected_w[r] -= coef;
    }
  }

  LossOutput out;
  out.loss = loss / pairs;
  out.grad.assign(params.theta.size(), 0.0);
  for (std::size_t c = 0; c < chosen.size(); ++c) {
    accumulate_sequence(params, chosen[c], chosen_w[c] / pairs, out.grad);
  }
  for (std::size_t r = 0; r < rejected.size(); ++r) {
    accumulate_sequence(params, rejected[r], rejected_w[r] / pairs, out.grad);
  }
  out.diagnostics["margin"] = margin_sum / pairs;
  out.diagnostics["pairs"] = pairs;
  return out;
}

void check_group_versions(const std::vector<Rollout>& rollouts,
                          const PolicyParams& old_snapshot) {
  for (const Rollout& r : rollouts) {
    if (r.gen_version != rollouts.front().gen_version) {
      throw MixedSnapshotError(
          "group mixes rollouts from generator versions " +
          std::to_string(rollouts.front().gen_version) + " and " +
          std::to_string(r.gen_version));
    }
  }
  if (!rollouts.empty() && rollouts.front().gen_version != old_snapshot.version) {
    throw MixedSnapshotError("rollouts were generated by version " +
                             std::to_string(rollouts.front().gen_version) +
                             " but the old snapshot is version " +
                             std::to_string(old_snapshot.version));
  }
}

struct SurrogateStats {
  double surrogate = 0.0;
  double kl = 0.0;
  std::size_t tokens = 0;
  std::size_t clipped = 0;
  double ratio_sum = 0.0;
};

// Adds one sequence's clipped surrogate (and optional KL penalty) to `grad`.
void clipped_sequence_term(const PolicyParams& params, const PolicyParams* ref,
                           const Rollout& r, std::span<const double> advantages,
                           double clip_eps, double kl_beta, ParamVector& grad,
                           SurrogateStats& stats) {
  if (r.gen_logprobs.size() != r.response.size()) {
    throw InvalidInputError("rollout gen_logprobs length differs from response");
  }
  const SequenceLogProb lp = log_prob(params, r.prompt, r.response);
  std::vector<double> ref_lp;
  if (ref != nullptr) ref_lp = log_prob(*ref, r.prompt, r.response).per_token;

  std::vector<double> w(r.response.size(), 0.0);
  double ratio_sum = 0.0;
  for (std::size_t t = 0; t < r.response.size(); ++t) {
    const double A = advantages[t];
    const double ratio = std::exp(lp.per_token[t] - r.gen_logprobs[t]);
    const double unclipped = ratio * A;
    const double clipped =
        std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * A;
    if (clipped < unclipped) {
      stats.surrogate -= clipped;
      ++stats.clipped;
    } else {
      stats.surrogate -= unclipped;
      w[t] = -A * ratio;
    }
    if (ref != nullptr) {
      stats.kl += lp.per_token[t] - ref_lp[t];
      w[t] += kl_beta;
    }
    ratio_sum += ratio;
  }
  stats.tokens += r.response.size();
  stats.ratio_sum += ratio_sum / static_cast<double>(r.response.size());
  accumulate_log_prob_grad(params, r.prompt, r.response, w, grad);
}

}  // namespace

void ObjectiveConfig::validate() const {
  if (!(beta_dpo > 0.0)) throw InvalidInputError("beta_dpo must be > 0");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) {
    throw InvalidInputError("clip_eps must lie in (0, 1)");
  }
  if (kl_beta < 0.0 || nll_scale < 0.0 || entropy_coeff < 0.0 ||
      alpha_grpo < 0.0) {
    throw InvalidInputError(
        "kl_beta, nll_scale, entropy_coeff and alpha_grpo must be >= 0");
  }
}

double implicit_reward(const PolicyParams& params,
                       const PolicyParams& ref_params, const TokenSeq& prompt,
                       const TokenSeq& response, double beta) {
  if (!(beta > 0.0)) throw InvalidInputError("beta must be positive");
  return beta * (log_prob(params, prompt, response).total -
                 log_prob(ref_params, prompt, response).total);
}

LossOutput dpo_loss(const PolicyParams& params, const PolicyParams& ref_params,
                    const PreferencePair& pair, double beta) {
  require_shared_prompt(pair.prompt, pair.chosen);
  require_shared_prompt(pair.prompt, pair.rejected);
  LossOutput out = pairwise_dpo(params, ref_params,
                                std::span<const Rollout>(&pair.chosen, 1),
                                std::span<const Rollout>(&pair.rejected, 1),
                                beta);
  out.diagnostics.erase("pairs");
  out.diagnostics["logp_chosen"] =
      log_prob(params, pair.prompt, pair.chosen.response).total;
  out.diagnostics["logp_rejected"] =
      log_prob(params, pair.prompt, pair.rejected.response).total;
  return out;
}

std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) {
    throw InvalidInputError("group_advantages needs at least 2 rewards");
  }
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) /
                      static_cast<double>(rewards.size());
  std::vector<double> adv(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = rewards[i] - mean;
  return adv;
}

LossOutput grpo_loss(const PolicyParams& params,
                     const PolicyParams& old_snapshot,
                     const PolicyParams& ref_params, const ResponseGroup& group,
                     const ObjectiveConfig& cfg) {
  if (group.rollouts.empty()) throw InvalidInputError("grpo_loss: empty group");
  if (group.advantages.size() != group.rollouts.size()) {
    throw InvalidInputError("grpo_loss: advantages not computed for group");
  }
  check_group_versions(group.rollouts, old_snapshot);

  LossOutput out;
  out.grad.assign(params.theta.size(), 0.0);
  SurrogateStats stats;
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const Rollout& r = group.rollouts[i];
    require_shared_prompt(group.prompt, r);
    const std::vector<double> adv(r.response.size(), group.advantages[i]);
    clipped_sequence_term(params, &ref_params, r, adv, cfg.clip_eps,
                          cfg.kl_beta, out.grad, stats);
  }
  out.loss = stats.surrogate + cfg.kl_beta * stats.kl;
  out.diagnostics["surrogate"] = stats.surrogate;
  out.diagnostics["kl"] = stats.kl;
  out.diagnostics["clip_fraction"] =
      static_cast<double>(stats.clipped) / static_cast<double>(stats.tokens);
  out.diagnostics["mean_ratio"] =
      stats.ratio_sum / static_cast<double>(group.rollouts.size());
  return out;
}

LossOutput ppo_token_loss(const PolicyParams& params,
                          const PolicyParams& old_snapshot,
                          const Rollout& rollout,
                          std::span<const double> per_token_advantages,
                          double clip_eps) {
  if (per_token_advantages.size() != rollout.response.size()) {
    throw InvalidInputError(
        "ppo_token_loss: advantage count differs from response length");
  }
  if (rollout.gen_version != old_snapshot.version) {
    throw MixedSnapshotError("rollout was not generated by the old snapshot");
  }
  LossOutput out;
  out.grad.assign(params.theta.size(), 0.0);
  SurrogateStats stats;
  clipped_sequence_term(params, nullptr, rollout, per_token_advantages,
                        clip_eps, 0.0, out.grad, stats);
  out.loss = stats.surrogate;
  out.diagnostics["clip_fraction"] =
      static_cast<double>(stats.clipped) / static_cast<double>(stats.tokens);
  out.diagnostics["mean_ratio"] = stats.ratio_sum;
  return out;
}

LossOutput group_dpo_loss(const PolicyParams& params,
                          const PolicyParams& ref_params,
                          std::span<const Rollout> correct,
                          std::span<const Rollout> incorrect, double beta) {
  if (correct.empty() || incorrect.empty()) {
    throw DegenerateGroupError(
        "group DPO needs at least one correct and one incorrect response");
  }
  for (const Rollout& r : incorrect) require_shared_prompt(correct[0].prompt, r);
  for (const Rollout& r : correct) require_shared_prompt(correct[0].prompt, r);
  return pairwise_dpo(params, ref_params, correct, incorrect, beta);
}

GroupSplit split_by_reward(const ResponseGroup& group) {
  if (group.rewards.size() != group.rollouts.size()) {
    throw InvalidInputError("group rewards and rollouts differ in length");
  }
  GroupSplit split;
  if (group.rewards.empty()) return split;
  const double mean =
      std::accumulate(group.rewards.begin(), group.rewards.end(), 0.0) /
      static_cast<double>(group.rewards.size());
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    if (group.rewards[i] > mean) split.correct.push_back(group.rollouts[i]);
    if (group.rewards[i] < mean) split.incorrect.push_back(group.rollouts[i]);
  }
  return split;
}

LossOutput combined_loss(const PolicyParams& params,
                         const PolicyParams& old_snapshot,
                         const PolicyParams& ref_params,
                         const ResponseGroup& group,
                         const ObjectiveConfig& cfg) {
  const GroupSplit split = split_by_reward(group);
  LossOutput out = group_dpo_loss(params, ref_params, split.correct,
                                  split.incorrect, cfg.beta_dpo);
  if (cfg.alpha_grpo == 0.0) return out;
  const LossOutput rl = grpo_loss(params, old_snapshot, ref_params, group, cfg);
  out.loss += cfg.alpha_grpo * rl.loss;
  add_scaled(out.grad, rl.grad, cfg.alpha_grpo);
  out.diagnostics["grpo_loss"] = rl.loss;
  out.diagnostics["clip_fraction"] = rl.diagnostics.at("clip_fraction");
  return out;
}

LossOutput nll_augment(LossOutput base, const PolicyParams& params,
                       const Rollout& chosen, double scale) {
  if (scale < 0.0) throw InvalidInputError("nll scale must be >= 0");
  if (scale == 0.0) return base;
  const double nll = -log_prob(params, chosen.prompt, chosen.response).total;
  base.loss += scale * nll;
  accumulate_sequence(params, chosen, -scale, base.grad);
  base.diagnostics["nll"] = nll;
  return base;
}

LossOutput entropy_regularize(LossOutput base, const PolicyParams& params,
                              std::span<const Rollout> rollouts, double coeff) {
  if (coeff < 0.0) throw InvalidInputError("entropy coefficient must be >= 0");
  if (coeff == 0.0) return base;
  const double h = mean_next_token_entropy(params, rollouts);
  base.loss -= coeff * h;
  accumulate_entropy_grad(params, rollouts, -coeff, base.grad);
  base.diagnostics["entropy"] = h;
  return base;
}

}  // namespace alignlab
