#include "alignlab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "alignlab/error.hpp"
#include "alignlab/rng.hpp"

namespace alignlab {

std::size_t ModelShape::param_count() const {
  return ParamLayout(*this).total;
}

void ModelShape::validate() const {
  if (vocab < 4) throw InvalidInputError("model vocab must be >= 4");
  if (embed < 1 || context < 1 || hidden < 1) {
    throw InvalidInputError("model embed, context and hidden must be >= 1");
  }
}

ParamLayout::ParamLayout(const ModelShape& s) {
  const auto V = static_cast<std::size_t>(s.vocab);
  const auto d = static_cast<std::size_t>(s.embed);
  const auto k = static_cast<std::size_t>(s.context);
  const auto h = static_cast<std::size_t>(s.hidden);
  embedding = 0;
  hidden_w = embedding + V * d;
  hidden_b = hidden_w + k * d * h;
  out_w = hidden_b + h;
  out_b = out_w + h * V;
  total = out_b + V;
}

PolicyParams PolicyParams::zeros(const ModelShape& shape) {
  shape.validate();
  PolicyParams p;
  p.shape = shape;
  p.theta.assign(shape.param_count(), 0.0);
  return p;
}

PolicyParams PolicyParams::random(const ModelShape& shape, std::uint64_t seed,
                                  double scale) {
  PolicyParams p = zeros(shape);
  Engine eng = make_engine(seed);
  for (double& w : p.theta) w = scale * normal01(eng);
  return p;
}

bool PolicyParams::all_finite() const {
  return std::all_of(theta.begin(), theta.end(),
                     [](double w) { return std::isfinite(w); });
}

std::span<double> PolicyParams::output_bias() {
  const ParamLayout layout(shape);
  return std::span<double>(theta).subspan(layout.out_b, shape.vocab);
}

std::span<const double> PolicyParams::output_bias() const {
  const ParamLayout layout(shape);
  return std::span<const double>(theta).subspan(layout.out_b, shape.vocab);
}

namespace {

void check_tokens(std::span<const Token> tokens, int vocab) {
  for (Token t : tokens) {
    if (t < 0 || t >= vocab) {
      throw InvalidTokenError("token id " + std::to_string(t) +
                              " outside vocabulary of size " +
                              std::to_string(vocab));
    }
  }
}

// Activations of one next-token prediction, kept for the backward pass.
struct Activation {
  std::vector<Token> window;
  std::vector<double> input;
  std::vector<double> hidden;
  std::vector<double> logits;
};

class Network {
 public:
  explicit Network(const PolicyParams& params)
      : theta_(params.theta), shape_(params.shape), layout_(params.shape) {
    if (theta_.size() != layout_.total) {
      throw InvalidInputError("parameter vector length " +
                              std::to_string(theta_.size()) +
                              " does not match model shape (" +
                              std::to_string(layout_.total) + ")");
    }
  }

  const ModelShape& shape() const { return shape_; }

  void forward(std::span<const Token> context, Activation& act) const {
    const int k = shape_.context;
    const int d = shape_.embed;
    const int h = shape_.hidden;
    const int V = shape_.vocab;
    const int kd = k * d;
    const auto n = static_cast<std::ptrdiff_t>(context.size());

    act.window.resize(k);
    for (int j = 0; j < k; ++j) {
      const std::ptrdiff_t idx = n - k + j;
      act.window[j] = idx >= 0 ? context[idx] : kPad;
    }

    act.input.resize(kd);
    for (int j = 0; j < k; ++j) {
      const double* e = &theta_[layout_.embedding +
                                static_cast<std::size_t>(act.window[j]) * d];
      std::copy(e, e + d, act.input.begin() + j * d);
    }

    act.hidden.resize(h);
    const double* w1 = &theta_[layout_.hidden_w];
    const double* b1 = &theta_[layout_.hidden_b];
    for (int i = 0; i < h; ++i) {
      const double* row = w1 + static_cast<std::size_t>(i) * kd;
      double z = b1[i];
      for (int j = 0; j < kd; ++j) z += row[j] * act.input[j];
      act.hidden[i] = std::tanh(z);
    }

    act.logits.resize(V);
    const double* w2 = &theta_[layout_.out_w];
    const double* b2 = &theta_[layout_.out_b];
    for (int v = 0; v < V; ++v) {
      const double* row = w2 + static_cast<std::size_t>(v) * h;
      double z = b2[v];
      for (int i = 0; i < h; ++i) z += row[i] * act.hidden[i];
      act.logits[v] = z;
    }
  }

  // grad += d(sum_v dlogits[v] * logits[v]) / dtheta
  void backward(const Activation& act, std::span<const double> dlogits,
                std::span<double> grad) const {
    const int d = shape_.embed;
    const int h = shape_.hidden;
    const int V = shape_.vocab;
    const int kd = shape_.context * d;

    dhidden_.assign(h, 0.0);
    const double* w2 = &theta_[layout_.out_w];
    double* gw2 = &grad[layout_.out_w];
    double* gb2 = &grad[layout_.out_b];
    for (int v = 0; v < V; ++v) {
      const double g = dlogits[v];
      if (g == 0.0) continue;
      gb2[v] += g;
      const double* row = w2 + static_cast<std::size_t>(v) * h;
      double* grow = gw2 + static_cast<std::size_t>(v) * h;
      for (int i = 0; i < h; ++i) {
        grow[i] += g * act.hidden[i];
        dhidden_[i] += g * row[i];
      }
    }

    dinput_.assign(kd, 0.0);
    const double* w1 = &theta_[layout_.hidden_w];
    double* gw1 = &grad[layout_.hidden_w];
    double* gb1 = &grad[layout_.hidden_b];
    for (int i = 0; i < h; ++i) {
      const double a = act.hidden[i];
      const double dz = dhidden_[i] * (1.0 - a * a);
      if (dz == 0.0) continue;
      gb1[i] += dz;
      const double* row = w1 + static_cast<std::size_t>(i) * kd;
      double* grow = gw1 + static_cast<std::size_t>(i) * kd;
      for (int j = 0; j < kd; ++j) {
        grow[j] += dz * act.input[j];
        dinput_[j] += dz * row[j];
      }
    }

    for (std::size_t slot = 0; slot < act.window.size(); ++slot) {
      double* ge = &grad[layout_.embedding +
                         static_cast<std::size_t>(act.window[slot]) * d];
      for (int e = 0; e < d; ++e) ge[e] += dinput_[slot * d + e];
    }
  }

 private:
  std::span<const double> theta_;
  ModelShape shape_;
  ParamLayout layout_;
  mutable std::vector<double> dhidden_;
  mutable std::vector<double> dinput_;
};

TokenSeq concat(const TokenSeq& prompt, const TokenSeq& response) {
  TokenSeq seq;
  seq.reserve(prompt.size() + response.size());
  seq.insert(seq.end(), prompt.begin(), prompt.end());
  seq.insert(seq.end(), response.begin(), response.end());
  return seq;
}

void check_grad_size(const PolicyParams& params, std::span<double> grad) {
  if (grad.size() != params.theta.size()) {
    throw InvalidInputError("gradient buffer length does not match params");
  }
}

}  // namespace

std::vector<double> logits(const PolicyParams& params,
                           std::span<const Token> context) {
  if (context.empty()) throw InvalidInputError("logits: empty context");
  check_tokens(context, params.shape.vocab);
  Network net(params);
  Activation act;
  net.forward(context, act);
  return std::move(act.logits);
}

std::vector<double> log_softmax(std::span<const double> logits,
                                double temperature) {
  std::vector<double> out(logits.begin(), logits.end());
  for (double& l : out) l /= temperature;
  const double mx = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (double l : out) sum += std::exp(l - mx);
  const double lse = mx + std::log(sum);
  for (double& l : out) l -= lse;
  return out;
}

SequenceLogProb log_prob(const PolicyParams& params, const TokenSeq& prompt,
                         const TokenSeq& response) {
  if (response.empty()) throw InvalidInputError("log_prob: empty response");
  check_tokens(prompt, params.shape.vocab);
  check_tokens(response, params.shape.vocab);
  Network net(params);
  const TokenSeq seq = concat(prompt, response);
  SequenceLogProb out;
  out.per_token.reserve(response.size());
  Activation act;
  for (std::size_t t = 0; t < response.size(); ++t) {
    net.forward(std::span<const Token>(seq).first(prompt.size() + t), act);
    const std::vector<double> lp = log_softmax(act.logits);
    out.per_token.push_back(lp[response[t]]);
    out.total += lp[response[t]];
  }
  return out;
}

std::vector<int> nucleus(std::span<const double> probs, double top_p) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs[a] > probs[b]; });
  if (top_p >= 1.0) return order;

  std::size_t keep = order.size();
  double cumulative = 0.0;
  for (std::size_t c = 0; c < order.size(); ++c) {
    cumulative += probs[order[c]];
    if (cumulative >= top_p) {
      keep = c + 1;
      break;
    }
  }
  const double boundary = probs[order[keep - 1]];
  while (keep < order.size() && probs[order[keep]] == boundary) ++keep;
  order.resize(keep);
  return order;
}

Rollout sample_response(const PolicyParams& snapshot, const TokenSeq& prompt,
                        const SamplingParams& sampling, std::uint64_t seed) {
  if (sampling.max_len <= 0) {
    throw InvalidInputError("sample_response: max_len must be positive");
  }
  if (!(sampling.temperature > 0.0)) {
    throw InvalidInputError("sample_response: temperature must be positive");
  }
  if (!(sampling.top_p > 0.0 && sampling.top_p <= 1.0)) {
    throw InvalidInputError("sample_response: top_p must lie in (0, 1]");
  }
  if (prompt.empty()) throw InvalidInputError("sample_response: empty prompt");
  check_tokens(prompt, snapshot.shape.vocab);

  Network net(snapshot);
  Engine eng = make_engine(seed);
  Rollout out;
  out.prompt = prompt;
  out.gen_version = snapshot.version;
  out.sampling_temp = sampling.temperature;
  out.sampling_top_p = sampling.top_p;

  TokenSeq seq = prompt;
  Activation act;
  std::vector<double> probs(snapshot.shape.vocab);
  for (int step = 0; step < sampling.max_len; ++step) {
    net.forward(seq, act);
    const std::vector<double> lp = log_softmax(act.logits, sampling.temperature);
    for (std::size_t v = 0; v < lp.size(); ++v) probs[v] = std::exp(lp[v]);
    const std::vector<int> kept = nucleus(probs, sampling.top_p);

    double mass = 0.0;
    for (int v : kept) mass += probs[v];
    const double u = uniform01(eng) * mass;
    Token tok = kept.back();
    double cumulative = 0.0;
    for (int v : kept) {
      cumulative += probs[v];
      if (u < cumulative) {
        tok = v;
        break;
      }
    }

    out.response.push_back(tok);
    out.gen_logprobs.push_back(lp[tok]);
    seq.push_back(tok);
    if (tok == kEos) break;
  }
  return out;
}

namespace {

// Calls fn(activation, log_softmax) for every response position of every
// rollout. Returns the number of positions visited.
template <class Fn>
std::size_t for_each_position(const Network& net,
                              std::span<const Rollout> rollouts, Fn&& fn) {
  std::size_t positions = 0;
  Activation act;
  for (const Rollout& r : rollouts) {
    check_tokens(r.prompt, net.shape().vocab);
    check_tokens(r.response, net.shape().vocab);
    const TokenSeq seq = concat(r.prompt, r.response);
    for (std::size_t t = 0; t < r.response.size(); ++t) {
      net.forward(std::span<const Token>(seq).first(r.prompt.size() + t), act);
      fn(act, log_softmax(act.logits));
      ++positions;
    }
  }
  return positions;
}

double entropy_of(std::span<const double> lp) {
  double h = 0.0;
  for (double l : lp) h -= std::exp(l) * l;
  return h;
}

}  // namespace

double mean_next_token_entropy(const PolicyParams& params,
                               std::span<const Rollout> rollouts) {
  Network net(params);
  double sum = 0.0;
  const std::size_t n = for_each_position(
      net, rollouts,
      [&](const Activation&, const std::vector<double>& lp) {
        sum += entropy_of(lp);
      });
  if (n == 0) {
    throw InvalidInputError("mean_next_token_entropy: no response tokens");
  }
  return sum / static_cast<double>(n);
}

void accumulate_log_prob_grad(const PolicyParams& params,
                              const TokenSeq& prompt, const TokenSeq& response,
                              std::span<const double> weights,
                              std::span<double> grad) {
  if (response.empty()) throw InvalidInputError("log_prob: empty response");
  if (weights.size() != response.size()) {
    throw InvalidInputError("per-token weights must match response length");
  }
  check_grad_size(params, grad);
  check_tokens(prompt, params.shape.vocab);
  check_tokens(response, params.shape.vocab);

  Network net(params);
  const TokenSeq seq = concat(prompt, response);
  Activation act;
  std::vector<double> dlogits(params.shape.vocab);
  for (std::size_t t = 0; t < response.size(); ++t) {
    const double w = weights[t];
    if (w == 0.0) continue;
    net.forward(std::span<const Token>(seq).first(prompt.size() + t), act);
    const std::vector<double> lp = log_softmax(act.logits);
    for (std::size_t v = 0; v < lp.size(); ++v) dlogits[v] = -w * std::exp(lp[v]);
    dlogits[response[t]] += w;
    net.backward(act, dlogits, grad);
  }
}

void accumulate_entropy_grad(const PolicyParams& params,
                             std::span<const Rollout> rollouts, double scale,
                             std::span<double> grad) {
  check_grad_size(params, grad);
  Network net(params);
  std::size_t positions = 0;
  for (const Rollout& r : rollouts) positions += r.response.size();
  if (positions == 0) {
    throw InvalidInputError("mean_next_token_entropy: no response tokens");
  }
  const double w = scale / static_cast<double>(positions);
  std::vector<double> dlogits(params.shape.vocab);
  for_each_position(net, rollouts,
                    [&](const Activation& act, const std::vector<double>& lp) {
                      const double h = entropy_of(lp);
                      for (std::size_t v = 0; v < lp.size(); ++v) {
                        dlogits[v] = -w * std::exp(lp[v]) * (lp[v] + h);
                      }
                      net.backward(act, dlogits, grad);
                    });
}

ParamVector grad_log_prob(const PolicyParams& params, const TokenSeq& prompt,
                          const TokenSeq& response) {
  ParamVector grad(params.theta.size(), 0.0);
  const std::vector<double> ones(response.size(), 1.0);
  accumulate_log_prob_grad(params, prompt, response, ones, grad);
  return grad;
}

ParamVector grad_entropy(const PolicyParams& params,
                         std::span<const Rollout> rollouts) {
  ParamVector grad(params.theta.size(), 0.0);
  accumulate_entropy_grad(params, rollouts, 1.0, grad);
  return grad;
}

}  // namespace alignlab
