#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tokenizer.hpp"

namespace c3 {

enum class CorpusMode { kProse, kSecondLanguage, kRandomChars, kShuffled, kMixed };
enum class ShuffleUnit { kSentence, kWord };

std::string_view mode_name(CorpusMode mode);
std::optional<CorpusMode> parse_mode(std::string_view name);
// "prose, second_language, random_chars, shuffled, mixed"
std::string valid_mode_list();
std::string_view unit_name(ShuffleUnit unit);
std::optional<ShuffleUnit> parse_unit(std::string_view name);

struct CorpusSpec {
  std::uint64_t seed = 1;
  std::size_t n_documents = 100;
  std::size_t min_tokens = 64;
  std::size_t max_tokens = 256;
  CorpusMode mode = CorpusMode::kProse;
  double injection_rate = 0.1;              // random_chars only
  ShuffleUnit shuffle_unit = ShuffleUnit::kSentence;  // shuffled only

  void validate() const;
};

struct Document {
  std::uint64_t id = 0;
  CorpusMode mode = CorpusMode::kProse;  // never kMixed; mixed corpora label each document
  std::string text;

  std::size_t token_count() const { return text.size(); }
  TokenSequence tokens() const { return encode(text); }
  bool operator==(const Document&) const = default;
};

// Pure function of the CorpusSpec. Each document draws from streams seeded by
// (seed xor id), so documents can be generated independently.
std::vector<Document> generate_corpus(const CorpusSpec& spec);

// Single-document generators, exposed for targeted tests.
std::string prose_text(std::uint64_t doc_seed, std::size_t length);
std::string second_language_text(std::uint64_t doc_seed, std::size_t length);

std::string_view unit_delimiter(ShuffleUnit unit);
std::vector<std::string> split_segments(std::string_view text, ShuffleUnit unit);

// Seeded disjoint split preserving corpus order on both sides.
std::pair<std::vector<Document>, std::vector<Document>> split_corpus(const std::vector<Document>& corpus,
                                                                     double train_fraction, std::uint64_t seed);

// JSON lines: {"id":..., "mode":..., "text":...}
void write_corpus(const std::filesystem::path& path, const std::vector<Document>& docs);
std::vector<Document> read_corpus(const std::filesystem::path& path);
std::string corpus_jsonl(const std::vector<Document>& docs);

}  // namespace c3
