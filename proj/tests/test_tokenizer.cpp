#include <random>
#include <string>

#include "doctest.h"
#include "error.hpp"
#include "tokenizer.hpp"

using namespace c3;

TEST_CASE("bytes map to their own ids") {
  const auto ids = encode("Hi!");
  REQUIRE(ids.size() == 3);
  CHECK(ids[0] == 'H');
  CHECK(ids[1] == 'i');
  CHECK(ids[2] == '!');
  CHECK(encode("").empty());
}

TEST_CASE("high bytes stay in 128..255") {
  const std::string s = "\xe4\xb8\xad";
  const auto ids = encode(s);
  REQUIRE(ids.size() == 3);
  CHECK(ids[0] == 0xe4);
  CHECK(ids[2] == 0xad);
  CHECK(decode(ids) == s);
}

TEST_CASE("special ids sit above the byte range") {
  CHECK(vocab::kBos == 256);
  CHECK(vocab::kEos == 257);
  CHECK(vocab::kPad == 258);
  CHECK(vocab::kPromptBegin == 259);
  CHECK(vocab::kSize == 260);
  CHECK(vocab::is_special(vocab::kBos));
  CHECK_FALSE(vocab::is_special(255));
}

TEST_CASE("decode stops at EOS and skips padding") {
  TokenSequence ids = {'a', vocab::kPad, 'b', vocab::kEos, 'c'};
  CHECK(decode(ids) == "ab");
}

TEST_CASE("decode rejects other specials and out-of-range ids") {
  CHECK_THROWS_AS(decode(TokenSequence{'a', vocab::kBos}), Error);
  CHECK_THROWS_AS(decode(TokenSequence{vocab::kPromptBegin}), Error);
  CHECK_THROWS_AS(decode(TokenSequence{-1}), Error);
  CHECK_THROWS_AS(decode(TokenSequence{vocab::kSize}), Error);
}

TEST_CASE("prompt is the begin marker then the instruction bytes") {
  const auto& p = prompt_tokens();
  REQUIRE(p.size() == 1 + vocab::kPromptText.size());
  CHECK(p[0] == vocab::kPromptBegin);
  CHECK(decode(TokenSequence(p.begin() + 1, p.end())) == "repeat the text: ");
}

TEST_CASE("random byte strings round trip") {
  std::mt19937_64 rng(5);
  for (int n = 0; n < 10000; ++n) {
    std::string s(rng() % 64, '\0');
    for (auto& c : s) c = char(rng() & 0xff);
    const auto ids = encode(s);
    REQUIRE(ids.size() == s.size());
    REQUIRE(decode(ids) == s);
  }
}
