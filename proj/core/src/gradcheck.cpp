#include <cmath>
#include <cstdio>
#include <functional>

#include "alignlab/error.hpp"
#include "alignlab/harness.hpp"
#include "alignlab/objectives.hpp"

namespace alignlab {

namespace {

using LossFn = std::function<LossOutput(const PolicyParams&)>;

struct Instance {
  LossFn loss;
  PolicyParams at;
};

double max_abs(const ParamVector& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double norm2(const ParamVector& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

ParamVector central_difference(const Instance& inst, double h) {
  PolicyParams p = inst.at;
  ParamVector g(p.theta.size());
  for (std::size_t i = 0; i < p.theta.size(); ++i) {
    const double x = p.theta[i];
    p.theta[i] = x + h;
    const double up = inst.loss(p).loss;
    p.theta[i] = x - h;
    const double down = inst.loss(p).loss;
    p.theta[i] = x;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Builds random small instances of each objective. Instances whose importance
// ratios sit within `kKinkGap` of a clip boundary are redrawn, since the
// clipped objective is not differentiable there.
class InstanceFactory {
 public:
  InstanceFactory(const ModelShape& shape, std::uint64_t seed) : shape_(shape), seed_(seed) {}

  Instance make(std::string_view objective, int index) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      rng_ = make_engine(derive_seed({seed_, fnv1a(objective),
                                      static_cast<std::uint64_t>(index), attempt}));
      if (auto inst = build(objective, index)) return *inst;
      if (attempt > 1000) throw Error("gradcheck: cannot draw a kink-free instance");
    }
  }

 private:
  static constexpr double kKinkGap = 1e-3;
  static constexpr double kClip = 0.2;

  PolicyParams random_params(double scale, std::int64_t version) {
    PolicyParams p = PolicyParams::random(shape_, rng_(), scale);
    p.version = version;
    return p;
  }

  TokenSeq random_prompt() {
    TokenSeq prompt{kBos};
    const std::size_t len = 1 + uniform_index(rng_, 3);
    for (std::size_t i = 0; i < len; ++i) {
      prompt.push_back(static_cast<Token>(3 + uniform_index(rng_, shape_.vocab - 3)));
    }
    return prompt;
  }

  Rollout sample(const PolicyParams& from, const TokenSeq& prompt) {
    return sample_response(from, prompt, SamplingParams{1.0, 1.0, 5}, rng_());
  }

  std::vector<Rollout> sample_many(const PolicyParams& from, const TokenSeq& prompt,
                                   std::size_t n) {
    std::vector<Rollout> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample(from, prompt));
    return out;
  }

  // Perturbed copy standing in for a stale generator.
  PolicyParams nearby(const PolicyParams& p, double scale, std::int64_t version) {
    PolicyParams q = p;
    for (double& x : q.theta) x += scale * normal01(rng_);
    q.version = version;
    return q;
  }

  bool kink_free(const PolicyParams& params, const std::vector<Rollout>& rollouts) {
    for (const Rollout& r : rollouts) {
      const SequenceLogProb lp = log_prob(params, r.prompt, r.response);
      for (std::size_t t = 0; t < r.response.size(); ++t) {
        const double rho = std::exp(lp.per_token[t] - r.gen_logprobs[t]);
        if (std::abs(rho - (1.0 + kClip)) < kKinkGap) return false;
        if (std::abs(rho - (1.0 - kClip)) < kKinkGap) return false;
      }
    }
    return true;
  }

  ObjectiveConfig objective_config() {
    ObjectiveConfig c;
    c.beta_dpo = 0.1 + 0.9 * uniform01(rng_);
    c.kl_beta = 0.05;
    c.clip_eps = kClip;
    c.alpha_grpo = 0.5;
    return c;
  }

  std::optional<Instance> build(std::string_view objective, int index) {
    const PolicyParams params = random_params(0.5, 3);
    const PolicyParams ref = random_params(0.5, 0);
    const TokenSeq prompt = random_prompt();
    const ObjectiveConfig oc = objective_config();

    if (objective == "dpo" || objective == "nll" || objective == "entropy_reg") {
      PreferencePair pair{prompt, sample(ref, prompt), sample(ref, prompt), {}, {}};
      const double beta = oc.beta_dpo;
      if (objective == "dpo") {
        return Instance{[=](const PolicyParams& p) { return dpo_loss(p, ref, pair, beta); },
                        params};
      }
      if (objective == "nll") {
        return Instance{[=](const PolicyParams& p) {
                          return nll_augment(dpo_loss(p, ref, pair, beta), p, pair.chosen, 0.7);
                        },
                        params};
      }
      const std::vector<Rollout> group = sample_many(params, prompt, 3);
      return Instance{[=](const PolicyParams& p) {
                        return entropy_regularize(dpo_loss(p, ref, pair, beta), p, group, 0.3);
                      },
                      params};
    }

    // Even instances are on-policy (the old snapshot is the current
    // parameters), odd ones use a perturbed stale snapshot.
    const bool on_policy = index % 2 == 0;
    const PolicyParams old = on_policy ? [&] {
      PolicyParams o = params;
      o.version = 1;
      return o;
    }() : nearby(params, 0.05, 1);

    if (objective == "grpo" || objective == "combined") {
      ResponseGroup group;
      group.prompt = prompt;
      group.rollouts = sample_many(old, prompt, 4);
      if (objective == "grpo") {
        for (std::size_t i = 0; i < 4; ++i) group.rewards.push_back(uniform01(rng_));
      } else {
        group.rewards = {1.0, 0.0, 0.0, 0.0};
        for (std::size_t i = 2; i < 4; ++i) {
          if (uniform01(rng_) < 0.5) group.rewards[i] = 1.0;
        }
      }
      group.advantages = group_advantages(group.rewards);
      if (!kink_free(params, group.rollouts)) return std::nullopt;
      if (objective == "grpo") {
        return Instance{[=](const PolicyParams& p) { return grpo_loss(p, old, ref, group, oc); },
                        params};
      }
      return Instance{[=](const PolicyParams& p) { return combined_loss(p, old, ref, group, oc); },
                      params};
    }

    if (objective == "ppo_token") {
      const Rollout r = sample(old, prompt);
      std::vector<double> adv(r.response.size());
      for (double& a : adv) a = normal01(rng_);
      if (!kink_free(params, {r})) return std::nullopt;
      return Instance{[=](const PolicyParams& p) { return ppo_token_loss(p, old, r, adv, kClip); },
                      params};
    }

    if (objective == "group_dpo") {
      const std::vector<Rollout> correct = sample_many(ref, prompt, 1 + uniform_index(rng_, 3));
      const std::vector<Rollout> incorrect = sample_many(ref, prompt, 1 + uniform_index(rng_, 3));
      const double beta = oc.beta_dpo;
      return Instance{[=](const PolicyParams& p) {
                        return group_dpo_loss(p, ref, correct, incorrect, beta);
                      },
                      params};
    }
    throw InvalidInputError("gradcheck: unknown objective '" + std::string(objective) + "'");
  }

  ModelShape shape_;
  std::uint64_t seed_;
  Engine rng_;
};

}  // namespace

GradcheckReport cmd_gradcheck(const GradcheckOptions& options) {
  if (options.instances < 0) throw InvalidInputError("gradcheck: negative instance count");
  GradcheckReport report;
  report.vacuous = options.instances == 0;
  InstanceFactory factory(options.shape, options.seed);
  for (const std::string& name : gradcheck_objectives()) {
    GradcheckRow row;
    row.objective = name;
    for (int k = 0; k < options.instances; ++k) {
      const Instance inst = factory.make(name, k);
      ParamVector analytic = inst.loss(inst.at).grad;
      if (options.perturb) options.perturb(name, analytic);
      const ParamVector numeric = central_difference(inst, options.step);
      ParamVector diff(analytic.size());
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - numeric[i];
      const double scale = std::max(norm2(analytic), norm2(numeric));
      const double err = scale > 0.0 ? norm2(diff) / scale : max_abs(diff);
      row.max_rel_error = std::max(row.max_rel_error, err);
      ++row.instances;
    }
    row.pass = row.max_rel_error < options.tolerance;
    report.pass = report.pass && row.pass;
    report.rows.push_back(row);
  }
  return report;
}

std::string GradcheckReport::to_text() const {
  std::string out;
  char line[160];
  for (const GradcheckRow& r : rows) {
    std::snprintf(line, sizeof line, "%-12s instances=%-4zu max_rel_err=%.3e  %s\n",
                  r.objective.c_str(), r.instances, r.max_rel_error, r.pass ? "PASS" : "FAIL");
    out += line;
  }
  if (vacuous) out += "no instances: vacuous pass\n";
  out += pass ? "gradcheck: PASS\n" : "gradcheck: FAIL\n";
  return out;
}

}  // namespace alignlab
