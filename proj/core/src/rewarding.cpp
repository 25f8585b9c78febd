#include "alignlab/rewarding.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <regex>

#include "alignlab/error.hpp"
#include "alignlab/vocab.hpp"

namespace alignlab {

std::optional<CanonicalAnswer> CanonicalAnswer::make(std::int64_t num,
                                                     std::int64_t den) {
  if (den == 0) return std::nullopt;
  if (den < 0) {
    num = -num;
    den = -den;
  }
  if (num == 0) return CanonicalAnswer{0, 1};
  const std::int64_t g = std::gcd(num < 0 ? -num : num, den);
  return CanonicalAnswer{num / g, den / g};
}

std::string CanonicalAnswer::to_string() const {
  if (den == 1) return std::to_string(num);
  return std::to_string(num) + "/" + std::to_string(den);
}

std::optional<std::string> extract_answer(std::string_view text) {
  static const std::regex marker(R"(ANS\{([^{}]*)\}END)");
  std::optional<std::string> last;
  for (std::cregex_iterator it(text.data(), text.data() + text.size(), marker),
       end;
       it != end; ++it) {
    last = (*it)[1].str();
  }
  return last;
}

std::optional<std::string> extract_answer(const TokenSeq& response) {
  return extract_answer(vocab::render(response));
}

namespace {

// Up to 18 decimal digits always fit in int64.
constexpr std::size_t kMaxDigits = 18;

bool all_digits(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

std::int64_t digits_value(std::string_view s) {
  std::int64_t v = 0;
  for (char c : s) v = v * 10 + (c - '0');
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::optional<CanonicalAnswer> canonicalize(std::string_view answer) {
  std::string_view s = trim(answer);
  bool negative = false;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    negative = s.front() == '-';
    s.remove_prefix(1);
  }
  if (s.empty()) return std::nullopt;
  const std::int64_t sign = negative ? -1 : 1;

  if (const auto slash = s.find('/'); slash != std::string_view::npos) {
    const std::string_view n = s.substr(0, slash);
    const std::string_view d = s.substr(slash + 1);
    if (n.empty() || d.empty() || !all_digits(n) || !all_digits(d)) return std::nullopt;
    if (n.size() > kMaxDigits || d.size() > kMaxDigits) return std::nullopt;
    return CanonicalAnswer::make(sign * digits_value(n), digits_value(d));
  }

  if (const auto dot = s.find('.'); dot != std::string_view::npos) {
    const std::string_view ip = s.substr(0, dot);
    const std::string_view fp = s.substr(dot + 1);
    if (ip.empty() && fp.empty()) return std::nullopt;
    if (!all_digits(ip) || !all_digits(fp)) return std::nullopt;
    if (ip.size() + fp.size() > kMaxDigits) return std::nullopt;
    std::int64_t den = 1;
    for (std::size_t i = 0; i < fp.size(); ++i) den *= 10;
    const std::int64_t num = digits_value(ip) * den + digits_value(fp);
    return CanonicalAnswer::make(sign * num, den);
  }

  if (!all_digits(s) || s.size() > kMaxDigits) return std::nullopt;
  return CanonicalAnswer::make(sign * digits_value(s), 1);
}

Verdict verify(std::string_view response, const CanonicalAnswer& reference) {
  Verdict v;
  if (const auto raw = extract_answer(response)) {
    v.extracted = canonicalize(*raw);
  }
  v.correct = v.extracted.has_value() && *v.extracted == reference;
  return v;
}

Verdict verify(const TokenSeq& response, const CanonicalAnswer& reference) {
  return verify(vocab::render(response), reference);
}

void ScriptedRewardSpec::validate() const {
  if (length_bias_gamma < 0.0) throw InvalidInputError("length_bias_gamma must be >= 0");
  if (length_cap < 1) throw InvalidInputError("length_cap must be >= 1");
  if (keywords_per_prompt < 1 || keywords_per_prompt > vocab::kNumWords) {
    throw InvalidInputError("keywords_per_prompt must lie in [1, 16]");
  }
}

std::vector<Token> required_keywords(const TokenSeq& prompt) {
  std::vector<Token> out;
  const auto open = std::find(prompt.begin(), prompt.end(), vocab::kRequire);
  if (open == prompt.end()) return out;
  for (auto it = open + 1; it != prompt.end() && *it != vocab::kWrite; ++it) {
    if (vocab::is_word(*it)) out.push_back(*it);
  }
  return out;
}

double task_quality(const ScriptedRewardSpec& spec, const TokenSeq& prompt,
                    const TokenSeq& response) {
  const std::vector<Token> keywords = required_keywords(prompt);
  double coverage = 0.0;
  if (!keywords.empty()) {
    std::size_t present = 0;
    for (Token kw : keywords) {
      if (std::find(response.begin(), response.end(), kw) != response.end()) ++present;
    }
    coverage = static_cast<double>(present) / static_cast<double>(keywords.size());
  }
  const bool completed = !response.empty() && response.back() == kEos;
  return spec.coverage_weight * coverage +
         spec.completion_weight * (completed ? 1.0 : 0.0);
}

double scripted_reward(const ScriptedRewardSpec& spec, const TokenSeq& prompt,
                       const TokenSeq& response) {
  const double capped = static_cast<double>(
      std::min<std::size_t>(response.size(), static_cast<std::size_t>(spec.length_cap)));
  return task_quality(spec, prompt, response) +
         spec.length_bias_gamma * capped / static_cast<double>(spec.length_cap);
}

std::string_view to_string(RewardSource source) {
  return source == RewardSource::kVerifier ? "verifier" : "scripted";
}

namespace {

void check_group(const ResponseGroup& group) {
  if (group.rewards.size() != group.rollouts.size()) {
    throw InvalidInputError("group rewards and rollouts differ in length");
  }
}

PreferencePair make_pair(const ResponseGroup& group, std::size_t chosen,
                         std::size_t rejected) {
  PreferencePair p;
  p.prompt = group.prompt;
  p.chosen = group.rollouts[chosen];
  p.rejected = group.rollouts[rejected];
  p.chosen_index = chosen;
  p.rejected_index = rejected;
  return p;
}

}  // namespace

std::optional<PreferencePair> build_pair_binary(const ResponseGroup& group,
                                                Engine& rng) {
  check_group(group);
  std::vector<std::size_t> correct;
  std::vector<std::size_t> incorrect;
  for (std::size_t i = 0; i < group.rewards.size(); ++i) {
    if (group.rewards[i] == 1.0) {
      correct.push_back(i);
    } else if (group.rewards[i] == 0.0) {
      incorrect.push_back(i);
    } else {
      throw InvalidInputError("build_pair_binary: rewards must be 0 or 1");
    }
  }
  if (correct.empty() || incorrect.empty()) return std::nullopt;
  const std::size_t c = correct[uniform_index(rng, correct.size())];
  const std::size_t r = incorrect[uniform_index(rng, incorrect.size())];
  return make_pair(group, c, r);
}

std::optional<PreferencePair> build_pair_scalar(const ResponseGroup& group) {
  check_group(group);
  if (group.rewards.size() < 2) {
    throw InvalidInputError("build_pair_scalar needs at least 2 responses");
  }
  std::size_t best = 0;
  std::size_t worst = 0;
  for (std::size_t i = 1; i < group.rewards.size(); ++i) {
    if (group.rewards[i] > group.rewards[best]) best = i;
    if (group.rewards[i] < group.rewards[worst]) worst = i;
  }
  if (group.rewards[best] == group.rewards[worst]) return std::nullopt;
  return make_pair(group, best, worst);
}

namespace {

struct LengthFit {
  double mean_r = 0.0;
  double mean_l = 0.0;
  double slope = 0.0;
};

template <typename Sets>
LengthFit fit_length(const Sets& sets) {
  LengthFit f;
  double n = 0.0;
  for (const auto& set : sets) {
    for (const RewardRecord& r : set) {
      f.mean_r += r.reward;
      f.mean_l += static_cast<double>(r.length);
      n += 1.0;
    }
  }
  if (n == 0.0) throw InvalidInputError("length_normalized_score: no records");
  f.mean_r /= n;
  f.mean_l /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (const auto& set : sets) {
    for (const RewardRecord& r : set) {
      const double dl = static_cast<double>(r.length) - f.mean_l;
      sxx += dl * dl;
      sxy += dl * (r.reward - f.mean_r);
    }
  }
  if (n >= 2.0 && sxx > 0.0) f.slope = sxy / sxx;
  return f;
}

}  // namespace

double length_normalized_score(std::span<const RewardRecord> records) {
  const LengthFit f = fit_length(std::array{records});
  return f.mean_r - f.slope * f.mean_l;
}

std::vector<double> pooled_length_normalized_scores(
    std::span<const std::vector<RewardRecord>> sets) {
  const LengthFit f = fit_length(sets);
  std::vector<double> out;
  out.reserve(sets.size());
  for (const std::vector<RewardRecord>& set : sets) {
    if (set.empty()) throw InvalidInputError("length_normalized_score: empty record set");
    double mean_r = 0.0;
    double mean_l = 0.0;
    for (const RewardRecord& r : set) {
      mean_r += r.reward;
      mean_l += static_cast<double>(r.length);
    }
    const double n = static_cast<double>(set.size());
    out.push_back(mean_r / n - f.slope * mean_l / n);
  }
  return out;
}

}  // namespace alignlab
