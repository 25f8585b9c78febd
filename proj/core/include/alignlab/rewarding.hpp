#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "alignlab/objectives.hpp"
#include "alignlab/policy.hpp"
#include "alignlab/rng.hpp"

namespace alignlab {

// Exact rational in lowest terms; the sign lives on the numerator.
struct CanonicalAnswer {
  std::int64_t num = 0;
  std::int64_t den = 1;

  // Reduces num/den; nullopt when den == 0.
  static std::optional<CanonicalAnswer> make(std::int64_t num, std::int64_t den);
  std::string to_string() const;  // "n" or "n/d"
  bool operator==(const CanonicalAnswer&) const = default;
};

struct Verdict {
  bool correct = false;
  std::optional<CanonicalAnswer> extracted;
};

// Content of the last complete "ANS{...}END" marker.
std::optional<std::string> extract_answer(std::string_view text);
std::optional<std::string> extract_answer(const TokenSeq& response);

// Integers, fractions a/b and finite decimals, with an optional sign.
std::optional<CanonicalAnswer> canonicalize(std::string_view answer);

Verdict verify(std::string_view response, const CanonicalAnswer& reference);
Verdict verify(const TokenSeq& response, const CanonicalAnswer& reference);

// Deterministic stand-in for a learned reward model.
struct ScriptedRewardSpec {
  double coverage_weight = 1.0;    // fraction of required keywords present
  double completion_weight = 0.0;  // response terminated with EOS
  double length_bias_gamma = 0.0;
  int length_cap = 64;
  int keywords_per_prompt = 4;

  void validate() const;
};

// Keywords listed in a non-verifiable prompt (between REQ and WRITE).
std::vector<Token> required_keywords(const TokenSeq& prompt);

double task_quality(const ScriptedRewardSpec& spec, const TokenSeq& prompt,
                    const TokenSeq& response);

// task_quality + gamma * min(|response|, L) / L
double scripted_reward(const ScriptedRewardSpec& spec, const TokenSeq& prompt,
                       const TokenSeq& response);

enum class RewardSource { kVerifier, kScripted };
std::string_view to_string(RewardSource source);

struct RewardRecord {
  std::string prompt_id;
  std::size_t rollout_index = 0;
  double reward = 0.0;
  RewardSource source = RewardSource::kVerifier;
  std::size_t length = 0;
};

// Chosen uniformly from the reward-1 pool, rejected uniformly from the
// reward-0 pool; nullopt when either pool is empty (skip the prompt).
std::optional<PreferencePair> build_pair_binary(const ResponseGroup& group,
                                                Engine& rng);

// Best versus worst, first index wins ties; nullopt when all rewards are equal.
std::optional<PreferencePair> build_pair_scalar(const ResponseGroup& group);

// Validation reward with its linear length trend removed: fits
// reward ~ a + b * length by least squares and returns a, i.e. the mean of
// reward - b * length. Falls back to the raw mean when the slope is not
// identifiable (fewer than two records or a single distinct length).
double length_normalized_score(std::span<const RewardRecord> records);

// Scores each record set as mean(reward) - b * mean(length) with one slope b
// fitted over the union of all sets. Comparing checkpoints needs the shared
// slope: a checkpoint whose responses all have the same length carries no
// length trend of its own. A single set scores as length_normalized_score.
std::vector<double> pooled_length_normalized_scores(
    std::span<const std::vector<RewardRecord>> sets);

}  // namespace alignlab
