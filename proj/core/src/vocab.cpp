#include "alignlab/vocab.hpp"

#include <cstdio>

#include "alignlab/error.hpp"

namespace alignlab::vocab {

Token digit(int value) {
  if (value < 0 || value > 9) throw InvalidInputError("digit out of range");
  return kDigit0 + value;
}

std::optional<int> digit_value(Token t) {
  if (t >= kDigit0 && t < kDigit0 + 10) return t - kDigit0;
  return std::nullopt;
}

Token word(int index) {
  if (index < 0 || index >= kNumWords) throw InvalidInputError("word index out of range");
  return kWord0 + index;
}

bool is_word(Token t) { return t >= kWord0 && t < kWord0 + kNumWords; }

std::string token_text(Token t) {
  if (auto d = digit_value(t)) return std::string(1, static_cast<char>('0' + *d));
  if (is_word(t)) {
    char buf[8];
    std::snprintf(buf, sizeof buf, " w%02d", t - kWord0);
    return buf;
  }
  switch (t) {
    case kPad: return "<pad>";
    case kBos: return "<bos>";
    case kEos: return "<eos>";
    case kPlus: return "+";
    case kTimes: return "*";
    case kMod: return " mod ";
    case kSlash: return "/";
    case kDot: return ".";
    case kMinus: return "-";
    case kAnsOpen: return "ANS{";
    case kAnsClose: return "}END";
    case kFormat: return " [answer in the marker]";
    case kRequire: return "[use:";
    case kWrite: return " ]";
    default: return "<t" + std::to_string(t) + ">";
  }
}

std::string render(std::span<const Token> tokens) {
  std::string out;
  for (Token t : tokens) out += token_text(t);
  return out;
}

std::optional<TokenSeq> spell(std::string_view text) {
  TokenSeq out;
  for (char c : text) {
    if (c >= '0' && c <= '9') {
      out.push_back(digit(c - '0'));
    } else if (c == '/') {
      out.push_back(kSlash);
    } else if (c == '.') {
      out.push_back(kDot);
    } else if (c == '-') {
      out.push_back(kMinus);
    } else {
      return std::nullopt;
    }
  }
  return out;
}

}  // namespace alignlab::vocab
