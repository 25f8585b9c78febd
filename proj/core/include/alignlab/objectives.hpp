#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alignlab/policy.hpp"

namespace alignlab {

struct PreferencePair {
  TokenSeq prompt;
  Rollout chosen;
  Rollout rejected;
  // Positions inside the originating group, when built from one.
  std::optional<std::size_t> chosen_index;
  std::optional<std::size_t> rejected_index;
};

struct ResponseGroup {
  TokenSeq prompt;
  std::vector<Rollout> rollouts;
  std::vector<double> rewards;
  std::vector<double> advantages;  // filled by group_advantages
};

struct LossOutput {
  double loss = 0.0;
  ParamVector grad;
  std::map<std::string, double> diagnostics;
};

struct ObjectiveConfig {
  double beta_dpo = 0.1;
  double kl_beta = 0.001;
  double clip_eps = 0.2;
  double nll_scale = 0.0;
  double entropy_coeff = 0.0;
  double alpha_grpo = 0.01;

  void validate() const;
};

// beta * (log pi(response) - log pi_ref(response))
double implicit_reward(const PolicyParams& params,
                       const PolicyParams& ref_params, const TokenSeq& prompt,
                       const TokenSeq& response, double beta);

// -log sigmoid(r'(chosen) - r'(rejected)). Diagnostics: margin,
// logp_chosen, logp_rejected.
LossOutput dpo_loss(const PolicyParams& params, const PolicyParams& ref_params,
                    const PreferencePair& pair, double beta);

// A_i = r_i - mean(r). No standard-deviation scaling.
std::vector<double> group_advantages(std::span<const double> rewards);

// Clipped token-level surrogate summed over every token of every response,
// without length or group-size normalization, plus kl_beta times the sampled
// log-ratio to the reference. Ratios use the recorded gen_logprobs; the
// clipped branch contributes no gradient. Diagnostics: clip_fraction,
// mean_ratio, kl, surrogate.
LossOutput grpo_loss(const PolicyParams& params,
                     const PolicyParams& old_snapshot,
                     const PolicyParams& ref_params, const ResponseGroup& group,
                     const ObjectiveConfig& cfg);

// Single-sequence clipped surrogate with caller-supplied per-token advantages.
LossOutput ppo_token_loss(const PolicyParams& params,
                          const PolicyParams& old_snapshot,
                          const Rollout& rollout,
                          std::span<const double> per_token_advantages,
                          double clip_eps);

// Mean DPO loss over the Cartesian product correct x incorrect.
LossOutput group_dpo_loss(const PolicyParams& params,
                          const PolicyParams& ref_params,
                          std::span<const Rollout> correct,
                          std::span<const Rollout> incorrect, double beta);

// group_dpo_loss over the group's correct/incorrect split plus
// alpha_grpo * grpo_loss over the whole group.
LossOutput combined_loss(const PolicyParams& params,
                         const PolicyParams& old_snapshot,
                         const PolicyParams& ref_params,
                         const ResponseGroup& group, const ObjectiveConfig& cfg);

// base + scale * (-log pi(chosen)), not normalized by length.
LossOutput nll_augment(LossOutput base, const PolicyParams& params,
                       const Rollout& chosen, double scale);

// base + coeff * (-mean_next_token_entropy(params, rollouts)).
LossOutput entropy_regularize(LossOutput base, const PolicyParams& params,
                              std::span<const Rollout> rollouts, double coeff);

// Splits a group into responses above and below the group mean reward. For
// binary rewards this is exactly correct vs incorrect.
struct GroupSplit {
  std::vector<Rollout> correct;
  std::vector<Rollout> incorrect;
};
GroupSplit split_by_reward(const ResponseGroup& group);

}  // namespace alignlab
