#include <cmath>
#include <map>

#include "alignlab/error.hpp"
#include "alignlab/policy.hpp"
#include "gtest/gtest.h"
#include "oracle/oracle.hpp"

namespace alignlab {
namespace {

const ModelShape kSmall{11, 4, 3, 8};

// Zero weights with the output bias set to log-probabilities.
PolicyParams fixed_distribution(int vocab, const std::vector<double>& probs) {
  PolicyParams p = PolicyParams::zeros(ModelShape{vocab, 2, 2, 2});
  auto bias = p.output_bias();
  for (int v = 0; v < vocab; ++v) {
    bias[v] = v < static_cast<int>(probs.size()) && probs[v] > 0 ? std::log(probs[v]) : -1000.0;
  }
  return p;
}

TEST(ModelShape, ParamCountMatchesLayout) {
  const ModelShape s{11, 4, 3, 8};
  EXPECT_EQ(s.param_count(), 11u * 4 + 12 * 8 + 8 + 8 * 11 + 11);
  EXPECT_EQ(ParamLayout(s).total, s.param_count());
  EXPECT_THROW((ModelShape{3, 1, 1, 1}.validate()), InvalidInputError);
  EXPECT_THROW((ModelShape{4, 0, 1, 1}.validate()), InvalidInputError);
}

TEST(Logits, ZeroParamsGiveUniformSoftmax) {
  const PolicyParams p = PolicyParams::zeros(kSmall);
  const std::vector<double> z = logits(p, TokenSeq{1, 5, 7});
  for (double v : z) EXPECT_EQ(v, 0.0);
  for (double lp : log_softmax(z)) EXPECT_NEAR(std::exp(lp), 1.0 / 11, 1e-15);
}

TEST(Logits, Deterministic) {
  const PolicyParams p = PolicyParams::random(kSmall, 7, 0.5);
  EXPECT_EQ(logits(p, TokenSeq{1, 2, 3, 4}), logits(p, TokenSeq{1, 2, 3, 4}));
}

TEST(Logits, SoftmaxSumsToOne) {
  const PolicyParams p = PolicyParams::random(kSmall, 7, 1.0);
  for (const TokenSeq& ctx : {TokenSeq{1}, TokenSeq{1, 4, 9}, TokenSeq{3, 3, 3, 3, 10}}) {
    double s = 0.0;
    for (double lp : log_softmax(logits(p, ctx))) s += std::exp(lp);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Logits, MatchesIndependentForwardPass) {
  const PolicyParams p = PolicyParams::random(kSmall, 3, 0.8);
  const TokenSeq ctx{1, 6, 2, 9, 4};
  const std::vector<double> ours = log_softmax(logits(p, ctx));
  const std::vector<double> ref = oracle::next_log_probs(p, ctx);
  EXPECT_LT(oracle::max_abs_diff(ours, ref), 1e-12);
}

TEST(Logits, RejectsOutOfVocabularyTokens) {
  const PolicyParams p = PolicyParams::zeros(kSmall);
  EXPECT_THROW(logits(p, TokenSeq{1, 11}), InvalidTokenError);
  EXPECT_THROW(logits(p, TokenSeq{-1}), InvalidTokenError);
  EXPECT_THROW(log_prob(p, TokenSeq{1}, TokenSeq{12}), InvalidTokenError);
}

TEST(LogProb, ZeroParamsGiveMinusLLogV) {
  const PolicyParams p = PolicyParams::zeros(kSmall);
  const SequenceLogProb lp = log_prob(p, TokenSeq{1, 3}, TokenSeq{4, 5, 6, 2});
  EXPECT_NEAR(lp.total, -4.0 * std::log(11.0), 1e-12);
}

TEST(LogProb, TotalIsSumOfPerToken) {
  const PolicyParams p = PolicyParams::random(kSmall, 11, 0.7);
  const SequenceLogProb lp = log_prob(p, TokenSeq{1, 3}, TokenSeq{4, 5, 6, 2});
  double s = 0.0;
  double prod = 1.0;
  for (double t : lp.per_token) {
    EXPECT_LE(t, 0.0);
    EXPECT_GT(std::exp(t), 0.0);
    EXPECT_LE(std::exp(t), 1.0);
    s += t;
    prod *= std::exp(t);
  }
  EXPECT_DOUBLE_EQ(lp.total, s);
  EXPECT_NEAR(std::exp(lp.total), prod, 1e-15);
}

TEST(LogProb, MatchesChainRuleOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PolicyParams p = PolicyParams::random(kSmall, seed, 0.9);
    const TokenSeq prompt{1, 7, 8};
    const TokenSeq resp{3, 10, 4, 2};
    const double ours = log_prob(p, prompt, resp).total;
    EXPECT_NEAR(std::exp(ours), std::exp(oracle::sequence_log_prob(p, prompt, resp)), 1e-12);
  }
}

TEST(LogProb, EnumeratedResponsesSumToOne) {
  // 4-token vocabulary, responses up to 3 tokens
  const PolicyParams p = PolicyParams::random(ModelShape{4, 2, 2, 3}, 5, 1.0);
  double mass = 0.0;
  oracle::enumerate_responses(p, TokenSeq{1}, 3, [&](const TokenSeq& y, double lp_oracle) {
    const double lp = log_prob(p, TokenSeq{1}, y).total;
    EXPECT_NEAR(lp, lp_oracle, 1e-12);
    mass += std::exp(lp);
  });
  EXPECT_NEAR(mass, 1.0, 1e-12);
}

TEST(LogProb, InvariantToPadExtension) {
  const PolicyParams p = PolicyParams::random(kSmall, 2, 0.9);
  const TokenSeq prompt{1, 5};
  TokenSeq padded{0, 0, 0, 0, 0, 1, 5};
  EXPECT_EQ(log_prob(p, prompt, TokenSeq{3, 2}).total, log_prob(p, padded, TokenSeq{3, 2}).total);
}

TEST(LogProb, EmptyResponseIsInvalid) {
  const PolicyParams p = PolicyParams::zeros(kSmall);
  EXPECT_THROW(log_prob(p, TokenSeq{1}, TokenSeq{}), InvalidInputError);
}

TEST(Sampling, MatchesSoftmaxFrequencies) {
  const PolicyParams p = PolicyParams::random(kSmall, 21, 1.0);
  const TokenSeq prompt{1, 4};
  const std::vector<double> lp = oracle::next_log_probs(p, prompt);
  constexpr int kDraws = 100000;
  std::vector<int> counts(11, 0);
  for (int i = 0; i < kDraws; ++i) {
    const Rollout r = sample_response(p, prompt, SamplingParams{1.0, 1.0, 1}, 1000 + i);
    ++counts[r.response[0]];
  }
  double chi2 = 0.0;
  for (int v = 0; v < 11; ++v) {
    const double pv = std::exp(lp[v]);
    const double expected = pv * kDraws;
    const double se = std::sqrt(kDraws * pv * (1 - pv));
    EXPECT_LT(std::abs(counts[v] - expected), 3.0 * se + 1e-9) << "token " << v;
    chi2 += (counts[v] - expected) * (counts[v] - expected) / expected;
  }
  // chi-square with 10 degrees of freedom: P(X > 29.59) = 0.001
  EXPECT_LT(chi2, 29.59);
}

TEST(Sampling, ForcedEosEndsAfterOneToken) {
  PolicyParams p = PolicyParams::zeros(kSmall);
  p.output_bias()[kEos] = 100.0;
  const Rollout r = sample_response(p, TokenSeq{1}, SamplingParams{}, 9);
  ASSERT_EQ(r.response.size(), 1u);
  EXPECT_EQ(r.response[0], kEos);
}

TEST(Sampling, NucleusCutoffKeepsOnlyTopToken) {
  const PolicyParams p = fixed_distribution(4, {0.0, 0.6, 0.2, 0.2});
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    const Rollout r = sample_response(p, TokenSeq{1}, SamplingParams{1.0, 0.5, 1}, seed);
    ASSERT_EQ(r.response[0], 1);
  }
}

TEST(Sampling, NucleusKeepsBoundaryTies) {
  const std::vector<double> probs{0.1, 0.3, 0.3, 0.3};
  const std::vector<int> kept = nucleus(probs, 0.5);
  EXPECT_EQ(kept.size(), 3u);
  EXPECT_EQ(nucleus(probs, 1.0).size(), 4u);
  EXPECT_EQ(nucleus(std::vector<double>{0.6, 0.2, 0.2}, 0.5), std::vector<int>{0});
}

TEST(Sampling, RecordsUntruncatedTemperatureLogProbs) {
  const PolicyParams p = PolicyParams::random(kSmall, 4, 1.0);
  const SamplingParams sp{0.6, 0.9, 6};
  const Rollout r = sample_response(p, TokenSeq{1, 3}, sp, 77);
  ASSERT_EQ(r.gen_logprobs.size(), r.response.size());
  TokenSeq ctx{1, 3};
  for (std::size_t t = 0; t < r.response.size(); ++t) {
    const std::vector<double> lp = log_softmax(logits(p, ctx), 0.6);
    EXPECT_EQ(r.gen_logprobs[t], lp[r.response[t]]);
    EXPECT_LE(r.gen_logprobs[t], 0.0);
    ctx.push_back(r.response[t]);
  }
  EXPECT_EQ(r.sampling_temp, 0.6);
  EXPECT_EQ(r.sampling_top_p, 0.9);
}

TEST(Sampling, DeterministicAndStopsAtLimits) {
  const PolicyParams p = PolicyParams::random(kSmall, 4, 1.0);
  const SamplingParams sp{1.0, 1.0, 5};
  EXPECT_EQ(sample_response(p, TokenSeq{1}, sp, 3), sample_response(p, TokenSeq{1}, sp, 3));
  for (std::uint64_t s = 0; s < 200; ++s) {
    const Rollout r = sample_response(p, TokenSeq{1}, sp, s);
    ASSERT_FALSE(r.response.empty());
    ASSERT_LE(r.response.size(), 5u);
    const bool ended = r.response.back() == kEos;
    ASSERT_TRUE(ended || r.response.size() == 5u);
  }
}

TEST(Sampling, RejectsInvalidParameters) {
  const PolicyParams p = PolicyParams::zeros(kSmall);
  EXPECT_THROW(sample_response(p, TokenSeq{1}, SamplingParams{1.0, 1.0, 0}, 1), InvalidInputError);
  EXPECT_THROW(sample_response(p, TokenSeq{1}, SamplingParams{0.0, 1.0, 4}, 1), InvalidInputError);
  EXPECT_THROW(sample_response(p, TokenSeq{1}, SamplingParams{1.0, 0.0, 4}, 1), InvalidInputError);
  EXPECT_THROW(sample_response(p, TokenSeq{1}, SamplingParams{1.0, 1.5, 4}, 1), InvalidInputError);
}

TEST(Entropy, ZeroParamsGiveLogV) {
  const PolicyParams p = PolicyParams::zeros(kSmall);
  const Rollout r = sample_response(p, TokenSeq{1}, SamplingParams{1.0, 1.0, 4}, 5);
  EXPECT_NEAR(mean_next_token_entropy(p, std::vector<Rollout>{r}), std::log(11.0), 1e-12);
}

TEST(Entropy, SaturatedPolicyHasNearZeroEntropy) {
  PolicyParams p = PolicyParams::zeros(kSmall);
  p.output_bias()[5] = 50.0;
  Rollout r;
  r.prompt = {1};
  r.response = {5, 5, 5};
  EXPECT_LT(mean_next_token_entropy(p, std::vector<Rollout>{r}), 1e-6);
}

TEST(Entropy, HandSetDistribution) {
  // the fourth token carries no mass
  const PolicyParams p = fixed_distribution(4, {0.5, 0.25, 0.25, 0.0});
  Rollout r;
  r.prompt = {1};
  r.response = {0, 1, 2};
  EXPECT_NEAR(mean_next_token_entropy(p, std::vector<Rollout>{r}), 1.0397, 1e-4);
}

TEST(Entropy, EmptyRolloutSetIsInvalid) {
  const PolicyParams p = PolicyParams::zeros(kSmall);
  EXPECT_THROW(mean_next_token_entropy(p, std::vector<Rollout>{}), InvalidInputError);
}

class GradientTest : public ::testing::TestWithParam<int> {};

TEST_P(GradientTest, LogProbGradientMatchesFiniteDifferences) {
  const std::uint64_t seed = static_cast<std::uint64_t>(GetParam());
  const PolicyParams p = PolicyParams::random(kSmall, seed, 0.6);
  const Rollout r = sample_response(p, TokenSeq{1, 4, 6}, SamplingParams{1.0, 1.0, 5}, seed);
  const ParamVector g = grad_log_prob(p, r.prompt, r.response);
  const ParamVector fd = oracle::finite_difference(
      [&](const PolicyParams& q) { return oracle::sequence_log_prob(q, r.prompt, r.response); }, p);
  EXPECT_LT(oracle::rel_error(g, fd), 1e-4);
}

TEST_P(GradientTest, EntropyGradientMatchesFiniteDifferences) {
  const std::uint64_t seed = static_cast<std::uint64_t>(GetParam());
  const PolicyParams p = PolicyParams::random(kSmall, seed + 100, 0.6);
  std::vector<Rollout> rs;
  for (int i = 0; i < 3; ++i) {
    rs.push_back(sample_response(p, TokenSeq{1, 9}, SamplingParams{1.0, 1.0, 4}, seed * 10 + i));
  }
  const ParamVector g = grad_entropy(p, rs);
  const ParamVector fd = oracle::finite_difference(
      [&](const PolicyParams& q) {
        double total = 0.0;
        int positions = 0;
        for (const Rollout& r : rs) {
          TokenSeq ctx = r.prompt;
          for (Token t : r.response) {
            total += oracle::next_entropy(q, ctx);
            ++positions;
            ctx.push_back(t);
          }
        }
        return total / positions;
      },
      p);
  EXPECT_LT(oracle::rel_error(g, fd), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(TwentyInstances, GradientTest, ::testing::Range(0, 20));

TEST(Gradients, EntropyGradientVanishesAtUniformPolicy) {
  const PolicyParams p = PolicyParams::zeros(kSmall);
  Rollout r;
  r.prompt = {1, 3};
  r.response = {4, 5, 2};
  for (double g : grad_entropy(p, std::vector<Rollout>{r})) EXPECT_NEAR(g, 0.0, 1e-10);
}

TEST(Gradients, LogProbGradientIsLinearAcrossSequences) {
  const PolicyParams p = PolicyParams::random(kSmall, 8, 0.6);
  const TokenSeq prompt{1, 3};
  const TokenSeq a{4, 5, 2};
  const TokenSeq b{7, 2};
  const ParamVector ga = grad_log_prob(p, prompt, a);
  const ParamVector gb = grad_log_prob(p, prompt, b);
  ParamVector both(p.theta.size(), 0.0);
  accumulate_log_prob_grad(p, prompt, a, std::vector<double>(a.size(), 1.0), both);
  accumulate_log_prob_grad(p, prompt, b, std::vector<double>(b.size(), 1.0), both);
  for (std::size_t i = 0; i < both.size(); ++i) EXPECT_NEAR(both[i], ga[i] + gb[i], 1e-14);
}

}  // namespace
}  // namespace alignlab
