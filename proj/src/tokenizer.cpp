#include "tokenizer.hpp"

#include "error.hpp"

namespace c3 {

TokenSequence encode(std::string_view text) {
  TokenSequence ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(static_cast<Token>(static_cast<unsigned char>(c)));
  return ids;
}

std::string decode(std::span<const Token> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (Token t : tokens) {
    if (t == vocab::kEos) break;
    if (t == vocab::kPad) continue;
    if (t < 0 || t >= 256) {
      fail(ErrorKind::kInvalidArgument, "cannot decode token id " + std::to_string(t));
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

const TokenSequence& prompt_tokens() {
  static const TokenSequence prompt = [] {
    TokenSequence p{vocab::kPromptBegin};
    for (Token t : encode(vocab::kPromptText)) p.push_back(t);
    return p;
  }();
  return prompt;
}

}  // namespace c3
