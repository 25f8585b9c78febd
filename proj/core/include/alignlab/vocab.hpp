#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "alignlab/policy.hpp"

// The synthetic desk vocabulary shared by every task. Ids 0..2 are the
// PAD/BOS/EOS specials from policy.hpp.
namespace alignlab::vocab {

inline constexpr Token kDigit0 = 3;  // "0".."9" occupy 3..12
inline constexpr Token kPlus = 13;
inline constexpr Token kTimes = 14;
inline constexpr Token kMod = 15;
inline constexpr Token kSlash = 16;
inline constexpr Token kDot = 17;
inline constexpr Token kMinus = 18;
inline constexpr Token kAnsOpen = 19;   // "ANS{"
inline constexpr Token kAnsClose = 20;  // "}END"
inline constexpr Token kFormat = 21;    // answer-format instruction
inline constexpr Token kRequire = 22;   // keyword list follows
inline constexpr Token kWrite = 23;     // end of keyword list
inline constexpr Token kWord0 = 24;
inline constexpr int kNumWords = 16;
inline constexpr int kSize = kWord0 + kNumWords;

Token digit(int value);
std::optional<int> digit_value(Token t);
Token word(int index);
bool is_word(Token t);

std::string token_text(Token t);
std::string render(std::span<const Token> tokens);

// Tokens spelling `text` with digit and sign/punctuation tokens; nullopt if a
// character has no token.
std::optional<TokenSeq> spell(std::string_view text);

}  // namespace alignlab::vocab
