#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace c3 {

using Token = std::int32_t;
using TokenSequence = std::vector<Token>;

// Byte-level vocabulary: byte b is id b; the four specials take the top ids.
namespace vocab {
inline constexpr Token kBos = 256;
inline constexpr Token kEos = 257;
inline constexpr Token kPad = 258;
inline constexpr Token kPromptBegin = 259;
inline constexpr Token kSize = 260;
inline constexpr std::string_view kPromptText = "repeat the text: ";

inline constexpr bool is_special(Token t) { return t >= kBos && t < kSize; }
}  // namespace vocab

TokenSequence encode(std::string_view text);
// Stops at the first EOS and skips PAD. Any other special or out-of-range id
// is an invalid-argument error.
std::string decode(std::span<const Token> tokens);

// PROMPT_BEGIN followed by the bytes of the reconstruction instruction.
const TokenSequence& prompt_tokens();

}  // namespace c3
