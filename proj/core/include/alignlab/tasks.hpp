#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alignlab/policy.hpp"
#include "alignlab/rewarding.hpp"
#include "alignlab/rng.hpp"

namespace alignlab {

enum class PromptKind { kVerifiable, kNonverifiable };
std::string_view to_string(PromptKind kind);

struct PromptRecord {
  std::string id;
  TokenSeq prompt;
  std::optional<CanonicalAnswer> reference;  // verifiable only
  PromptKind kind = PromptKind::kVerifiable;

  bool operator==(const PromptRecord&) const = default;
};

struct SplitSizes {
  std::size_t train = 512;
  std::size_t validation = 64;
  std::size_t test = 64;

  // Validation and test get a tenth of n each (between 1 and 64).
  static SplitSizes from_total(std::size_t n);
  std::size_t total() const { return train + validation + test; }
};

struct DatasetSplit {
  std::vector<PromptRecord> train;
  std::vector<PromptRecord> validation;
  std::vector<PromptRecord> test;
  std::uint64_t seed = 0;
};

// Operand ranges for the modular-arithmetic problems.
struct Difficulty {
  int modulus = 7;
  int operand_max = 3;  // operands drawn from [0, operand_max]
  bool allow_mul = true;

  void validate() const;
};

// "(a op b) mod m" followed by the answer-format instruction.
TokenSeq verifiable_prompt(int a, Token op, int b, int modulus);

// Ground-truth response in the answer template: ANS{answer}END <eos>.
TokenSeq answer_response(const CanonicalAnswer& answer);

DatasetSplit gen_verifiable(std::uint64_t seed, const SplitSizes& sizes,
                            const Difficulty& difficulty);
DatasetSplit gen_verifiable(std::uint64_t seed, std::size_t n,
                            const Difficulty& difficulty);

DatasetSplit gen_nonverifiable(std::uint64_t seed, const SplitSizes& sizes,
                               const ScriptedRewardSpec& spec);
DatasetSplit gen_nonverifiable(std::uint64_t seed, std::size_t n,
                               const ScriptedRewardSpec& spec);

// Shape of the demonstrations the seed policy is warm-started on: verifiable
// answers are well formed and carry the true answer with probability
// `answer_accuracy` (a uniformly random residue otherwise), with a few filler
// words in front; non-verifiable replies are short word lists that touch some
// of the required keywords.
struct DemoStyle {
  double answer_accuracy = 0.5;
  int max_filler = 2;
  int min_words = 2;
  int max_words = 8;
  double keyword_prob = 0.5;
};

TokenSeq demonstration(const PromptRecord& record, const Difficulty& difficulty,
                       const DemoStyle& style, Engine& rng);

// JSON Lines: {"id", "prompt": [...], "reference": "n/d" | null, "kind"}.
void write_jsonl(std::ostream& out, std::span<const PromptRecord> records);
std::vector<PromptRecord> read_jsonl(std::istream& in);

}  // namespace alignlab
