#include "alignlab/evaluation.hpp"

#include <cmath>
#include <thread>

#include "alignlab/error.hpp"
#include "alignlab/rng.hpp"

namespace alignlab {

namespace {

struct Generation {
  double reward = 0.0;
  std::size_t length = 0;
};

double reward_of(const PromptRecord& problem, const TokenSeq& response,
                 const ScriptedRewardSpec& spec) {
  if (problem.kind == PromptKind::kVerifiable) {
    return verify(response, *problem.reference).correct ? 1.0 : 0.0;
  }
  return scripted_reward(spec, problem.prompt, response);
}

}  // namespace

EvalReport evaluate(const PolicyParams& params, std::span<const PromptRecord> problems,
                    const EvalOptions& options) {
  if (options.samples < 1) throw InvalidInputError("evaluate: samples must be >= 1");
  if (problems.empty()) throw InvalidInputError("evaluate: no problems");
  for (const PromptRecord& p : problems) {
    if (p.kind == PromptKind::kVerifiable && !p.reference) {
      throw InvalidInputError("evaluate: verifiable problem '" + p.id + "' has no reference");
    }
  }
  const std::size_t n = static_cast<std::size_t>(options.samples);
  const SamplingParams sampling{options.temperature, options.top_p, options.max_len};

  std::vector<Generation> gens(problems.size() * n);
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < problems.size(); i += stride) {
      const PromptRecord& p = problems[i];
      for (std::size_t j = 0; j < n; ++j) {
        const std::uint64_t seed = derive_seed(
            {options.seed, static_cast<std::uint64_t>(Stream::kEvaluation), fnv1a(p.id), j});
        const Rollout r = sample_response(params, p.prompt, sampling, seed);
        gens[i * n + j] = {reward_of(p, r.response, options.reward), r.response.size()};
      }
    }
  };
  const std::size_t threads =
      std::min<std::size_t>(std::max(options.threads, 1), problems.size());
  if (threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }

  EvalReport report;
  report.samples = options.samples;
  std::vector<double> per_sample(n, 0.0);
  std::vector<RewardRecord> nonverifiable_records;
  double length_sum = 0.0;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const PromptRecord& p = problems[i];
    ProblemResult res{p.id, p.kind, 0.0, 0.0};
    for (std::size_t j = 0; j < n; ++j) {
      const Generation& g = gens[i * n + j];
      res.score += g.reward;
      res.mean_length += static_cast<double>(g.length);
      per_sample[j] += g.reward;
      RewardRecord rec{p.id, j, g.reward,
                       p.kind == PromptKind::kVerifiable ? RewardSource::kVerifier
                                                         : RewardSource::kScripted,
                       g.length};
      if (p.kind == PromptKind::kNonverifiable) nonverifiable_records.push_back(rec);
      report.records.push_back(std::move(rec));
    }
    res.score /= static_cast<double>(n);
    length_sum += res.mean_length;
    res.mean_length /= static_cast<double>(n);
    if (p.kind == PromptKind::kVerifiable) {
      report.verifiable_accuracy += res.score;
      ++report.verifiable_count;
    } else {
      report.nonverifiable_raw += res.score;
      ++report.nonverifiable_count;
    }
    report.mean += res.score;
    report.per_problem.push_back(std::move(res));
  }
  const double count = static_cast<double>(problems.size());
  report.mean /= count;
  report.mean_length = length_sum / (count * static_cast<double>(n));
  if (report.verifiable_count > 0) {
    report.verifiable_accuracy /= static_cast<double>(report.verifiable_count);
  }
  if (report.nonverifiable_count > 0) {
    report.nonverifiable_raw /= static_cast<double>(report.nonverifiable_count);
    report.nonverifiable_normalized = length_normalized_score(nonverifiable_records);
  }

  if (n >= 2) {
    double mu = 0.0;
    for (double& s : per_sample) {
      s /= count;
      mu += s;
    }
    mu /= static_cast<double>(n);
    double ss = 0.0;
    for (double s : per_sample) ss += (s - mu) * (s - mu);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    report.stderr_mean = sd / std::sqrt(static_cast<double>(n));
    report.stderr_defined = true;
  }
  return report;
}

}  // namespace alignlab
