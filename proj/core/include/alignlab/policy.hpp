#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace alignlab {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;
using ParamVector = std::vector<double>;

// Token ids the policy itself relies on. The remaining ids are task vocabulary
// (see vocab.hpp).
inline constexpr Token kPad = 0;
inline constexpr Token kBos = 1;
inline constexpr Token kEos = 2;

struct ModelShape {
  int vocab = 40;   // V, includes PAD/BOS/EOS
  int embed = 16;   // d
  int context = 7;  // k previous tokens fed to the model
  int hidden = 64;  // h

  std::size_t param_count() const;
  // Throws InvalidInputError when V < 4 or any of d, k, h < 1.
  void validate() const;

  bool operator==(const ModelShape&) const = default;
};

// Offsets of each parameter block inside the flat vector:
// embedding [V][d], hidden weights [h][k*d], hidden bias [h],
// output weights [V][h], output bias [V].
struct ParamLayout {
  explicit ParamLayout(const ModelShape& shape);

  std::size_t embedding = 0;
  std::size_t hidden_w = 0;
  std::size_t hidden_b = 0;
  std::size_t out_w = 0;
  std::size_t out_b = 0;
  std::size_t total = 0;
};

struct PolicyParams {
  ModelShape shape;
  ParamVector theta;
  std::int64_t version = 0;

  static PolicyParams zeros(const ModelShape& shape);
  // Gaussian entries with standard deviation `scale`.
  static PolicyParams random(const ModelShape& shape, std::uint64_t seed,
                             double scale);

  bool all_finite() const;
  std::span<double> output_bias();
  std::span<const double> output_bias() const;
};

struct SamplingParams {
  double temperature = 1.0;
  double top_p = 1.0;
  int max_len = 64;
};

// A sampled response together with what produced it.
struct Rollout {
  TokenSeq prompt;
  TokenSeq response;
  // log-probabilities of each response token under the generating snapshot's
  // temperature-adjusted, untruncated distribution
  std::vector<double> gen_logprobs;
  std::int64_t gen_version = 0;
  double sampling_temp = 1.0;
  double sampling_top_p = 1.0;

  bool operator==(const Rollout&) const = default;
};

struct SequenceLogProb {
  double total = 0.0;
  std::vector<double> per_token;
};

// Next-token logits given everything generated so far. Only the last k tokens
// are used; shorter contexts are left-padded with PAD.
std::vector<double> logits(const PolicyParams& params,
                           std::span<const Token> context);

// log softmax(logits / temperature)
std::vector<double> log_softmax(std::span<const double> logits,
                                double temperature = 1.0);

SequenceLogProb log_prob(const PolicyParams& params, const TokenSeq& prompt,
                         const TokenSeq& response);

// Indices kept by nucleus truncation, most probable first. Tokens tied with
// the boundary token's probability are all kept.
std::vector<int> nucleus(std::span<const double> probs, double top_p);

Rollout sample_response(const PolicyParams& snapshot, const TokenSeq& prompt,
                        const SamplingParams& sampling, std::uint64_t seed);

// Mean over every response position of the next-token entropy under `params`.
double mean_next_token_entropy(const PolicyParams& params,
                               std::span<const Rollout> rollouts);

ParamVector grad_log_prob(const PolicyParams& params, const TokenSeq& prompt,
                          const TokenSeq& response);

ParamVector grad_entropy(const PolicyParams& params,
                         std::span<const Rollout> rollouts);

// grad += sum_t weights[t] * d/dtheta log pi(response[t] | prefix).
// The workhorse behind every objective's gradient.
void accumulate_log_prob_grad(const PolicyParams& params,
                              const TokenSeq& prompt, const TokenSeq& response,
                              std::span<const double> weights,
                              std::span<double> grad);

// grad += scale * d/dtheta mean_next_token_entropy(params, rollouts)
void accumulate_entropy_grad(const PolicyParams& params,
                             std::span<const Rollout> rollouts, double scale,
                             std::span<double> grad);

}  // namespace alignlab
