#include "alignlab/tasks.hpp"

#include <algorithm>
#include <istream>
#include <json.hpp>
#include <ostream>

#include "alignlab/error.hpp"
#include "alignlab/vocab.hpp"

namespace alignlab {

std::string_view to_string(PromptKind kind) {
  return kind == PromptKind::kVerifiable ? "verifiable" : "nonverifiable";
}

SplitSizes SplitSizes::from_total(std::size_t n) {
  if (n < 3) throw InvalidInputError("dataset needs at least 3 records");
  const std::size_t held = std::clamp<std::size_t>(n / 10, 1, 64);
  return SplitSizes{n - 2 * held, held, held};
}

void Difficulty::validate() const {
  if (modulus < 2 || modulus > 99) throw InvalidInputError("modulus must lie in [2, 99]");
  if (operand_max < 0 || operand_max > 99) {
    throw InvalidInputError("operand_max must lie in [0, 99]");
  }
}

namespace {

void append_number(TokenSeq& out, int value) {
  const auto spelled = vocab::spell(std::to_string(value));
  out.insert(out.end(), spelled->begin(), spelled->end());
}

void check_sizes(const SplitSizes& sizes) {
  if (sizes.train < 1 || sizes.validation < 1 || sizes.test < 1) {
    throw InvalidInputError("every split needs at least one record");
  }
}

// Fills the three splits in order from a record factory.
template <class Make>
DatasetSplit fill_splits(std::uint64_t seed, const SplitSizes& sizes, Make&& make) {
  check_sizes(sizes);
  DatasetSplit split;
  split.seed = seed;
  std::size_t index = 0;
  for (std::size_t i = 0; i < sizes.train; ++i) split.train.push_back(make(index++));
  for (std::size_t i = 0; i < sizes.validation; ++i) split.validation.push_back(make(index++));
  for (std::size_t i = 0; i < sizes.test; ++i) split.test.push_back(make(index++));
  return split;
}

std::string record_id(std::string_view prefix, std::size_t index) {
  return std::string(prefix) + "-" + std::to_string(index);
}

}  // namespace

TokenSeq verifiable_prompt(int a, Token op, int b, int modulus) {
  TokenSeq p{kBos};
  append_number(p, a);
  p.push_back(op);
  append_number(p, b);
  p.push_back(vocab::kMod);
  append_number(p, modulus);
  p.push_back(vocab::kFormat);
  return p;
}

TokenSeq answer_response(const CanonicalAnswer& answer) {
  TokenSeq r{vocab::kAnsOpen};
  const auto spelled = vocab::spell(answer.to_string());
  r.insert(r.end(), spelled->begin(), spelled->end());
  r.push_back(vocab::kAnsClose);
  r.push_back(kEos);
  return r;
}

DatasetSplit gen_verifiable(std::uint64_t seed, const SplitSizes& sizes,
                            const Difficulty& difficulty) {
  difficulty.validate();
  Engine rng = make_engine(derive_seed({seed, 0x6d617468ULL}));
  const auto operands = static_cast<std::size_t>(difficulty.operand_max) + 1;
  return fill_splits(seed, sizes, [&](std::size_t index) {
    const int a = static_cast<int>(uniform_index(rng, operands));
    const int b = static_cast<int>(uniform_index(rng, operands));
    const bool mul = difficulty.allow_mul && uniform01(rng) < 0.5;
    const int value = (mul ? a * b : a + b) % difficulty.modulus;
    PromptRecord rec;
    rec.id = record_id("math", index);
    rec.prompt = verifiable_prompt(a, mul ? vocab::kTimes : vocab::kPlus, b,
                                   difficulty.modulus);
    rec.reference = CanonicalAnswer::make(value, 1);
    rec.kind = PromptKind::kVerifiable;
    return rec;
  });
}

DatasetSplit gen_verifiable(std::uint64_t seed, std::size_t n,
                            const Difficulty& difficulty) {
  return gen_verifiable(seed, SplitSizes::from_total(n), difficulty);
}

DatasetSplit gen_nonverifiable(std::uint64_t seed, const SplitSizes& sizes,
                               const ScriptedRewardSpec& spec) {
  spec.validate();
  Engine rng = make_engine(derive_seed({seed, 0x63686174ULL}));
  return fill_splits(seed, sizes, [&](std::size_t index) {
    std::vector<int> pool(vocab::kNumWords);
    for (int i = 0; i < vocab::kNumWords; ++i) pool[i] = i;
    // partial Fisher-Yates for distinct keywords
    for (int i = 0; i < spec.keywords_per_prompt; ++i) {
      const std::size_t j = i + uniform_index(rng, pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    PromptRecord rec;
    rec.id = record_id("chat", index);
    rec.prompt = {kBos, vocab::kRequire};
    for (int i = 0; i < spec.keywords_per_prompt; ++i) {
      rec.prompt.push_back(vocab::word(pool[i]));
    }
    rec.prompt.push_back(vocab::kWrite);
    rec.kind = PromptKind::kNonverifiable;
    return rec;
  });
}

DatasetSplit gen_nonverifiable(std::uint64_t seed, std::size_t n,
                               const ScriptedRewardSpec& spec) {
  return gen_nonverifiable(seed, SplitSizes::from_total(n), spec);
}

TokenSeq demonstration(const PromptRecord& record, const Difficulty& difficulty,
                       const DemoStyle& style, Engine& rng) {
  TokenSeq out;
  auto random_word = [&] {
    return vocab::word(static_cast<int>(uniform_index(rng, vocab::kNumWords)));
  };
  if (record.kind == PromptKind::kVerifiable) {
    const auto fillers = uniform_index(rng, static_cast<std::size_t>(style.max_filler) + 1);
    for (std::size_t i = 0; i < fillers; ++i) out.push_back(random_word());
    CanonicalAnswer answer_value = *record.reference;
    if (!(uniform01(rng) < style.answer_accuracy)) {
      const int guess = static_cast<int>(
          uniform_index(rng, static_cast<std::size_t>(difficulty.modulus)));
      answer_value = *CanonicalAnswer::make(guess, 1);
    }
    const TokenSeq answer = answer_response(answer_value);
    out.insert(out.end(), answer.begin(), answer.end());
    return out;
  }
  const std::vector<Token> keywords = required_keywords(record.prompt);
  const auto span = static_cast<std::size_t>(style.max_words - style.min_words + 1);
  const std::size_t words = style.min_words + uniform_index(rng, span);
  for (std::size_t i = 0; i < words; ++i) {
    if (!keywords.empty() && uniform01(rng) < style.keyword_prob) {
      out.push_back(keywords[uniform_index(rng, keywords.size())]);
    } else {
      out.push_back(random_word());
    }
  }
  out.push_back(kEos);
  return out;
}

void write_jsonl(std::ostream& out, std::span<const PromptRecord> records) {
  for (const PromptRecord& r : records) {
    nlohmann::json j;
    j["id"] = r.id;
    j["prompt"] = r.prompt;
    j["reference"] = r.reference ? nlohmann::json(r.reference->to_string())
                                 : nlohmann::json(nullptr);
    j["kind"] = to_string(r.kind);
    out << j.dump() << '\n';
  }
}

std::vector<PromptRecord> read_jsonl(std::istream& in) {
  std::vector<PromptRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      PromptRecord r;
      r.id = j.at("id").get<std::string>();
      r.prompt = j.at("prompt").get<TokenSeq>();
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "verifiable") {
        r.kind = PromptKind::kVerifiable;
      } else if (kind == "nonverifiable") {
        r.kind = PromptKind::kNonverifiable;
      } else {
        throw InvalidInputError("unknown kind '" + kind + "'");
      }
      if (!j.at("reference").is_null()) {
        r.reference = canonicalize(j.at("reference").get<std::string>());
        if (!r.reference) throw InvalidInputError("unparseable reference");
      }
      if (r.kind == PromptKind::kVerifiable && !r.reference) {
        throw InvalidInputError("verifiable record without reference");
      }
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInputError("dataset line " + std::to_string(lineno) + ": " + e.what());
    } catch (const InvalidInputError& e) {
      throw InvalidInputError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace alignlab
