#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cascade.hpp"
#include "corpus.hpp"

namespace c3 {

std::size_t levenshtein(std::span<const Token> a, std::span<const Token> b);

enum class EditKind { kSubstitution, kInsertion, kDeletion };

struct Edit {
  EditKind kind;
  std::size_t ref_index;  // insertions: the reference slot the hypothesis token was inserted before
};

// One canonical minimal alignment, traced from the start of both sequences so
// matches are taken as early as possible. Ties prefer substitution, then
// insertion, then deletion.
std::vector<Edit> align(std::span<const Token> reference, std::span<const Token> hypothesis);

// 1 - lev(ref, hyp) / max(|ref|, |hyp|); empty reference is an error.
double precision(std::span<const Token> reference, std::span<const Token> hypothesis);

double compression_ratio(std::size_t text_token_count, std::size_t latent_count);

struct EvalRecord {
  std::uint64_t id = 0;
  std::size_t text_token_count = 0;
  std::size_t latent_count = 0;
  double compression_ratio = 0;
  double precision = 0;
  std::vector<double> error_positions;  // normalized reference positions in [0, 1]
  bool truncated = false;               // generation hit the token limit without EOS
};

// Precision, ratio and error positions of one (reference, hypothesis) pair.
EvalRecord score(std::uint64_t id, std::span<const Token> reference, std::span<const Token> hypothesis,
                 std::size_t latent_count);

// max_new_tokens == 0 selects len(reference) + 16 per document. Documents are
// split across `workers` threads; records come back in input order.
std::vector<EvalRecord> evaluate(const CascadeModel<float>& model, const std::vector<Document>& docs,
                                 std::size_t max_new_tokens, std::size_t workers = 1);

struct BinStats {
  std::size_t lo = 0;
  std::size_t hi = 0;
  std::size_t count = 0;
  std::optional<double> mean_precision;
  std::optional<double> mean_ratio;
};

using DecileProfile = std::array<std::optional<double>, 10>;

struct EvalReport {
  std::size_t n_latent = 0;
  std::size_t total = 0;
  std::vector<BinStats> bins;  // [edge_i, edge_i+1), last bin closed
  BinStats overflow;           // documents outside every bin
  std::optional<double> mean_precision;
  DecileProfile deciles;
};

// Fractions of pooled error positions per decile; all null when nothing failed.
DecileProfile positional_error_profile(std::span<const EvalRecord> records);

EvalReport bin_report(std::span<const EvalRecord> records, std::span<const std::size_t> bin_edges,
                      std::size_t n_latent);

std::string report_json(const EvalReport& report, const std::string& config_hash);
// bin_lo,bin_hi,count,mean_precision,mean_ratio; undefined means are empty fields.
std::string report_csv(const EvalReport& report);
// decile,lo,hi,fraction
std::string deciles_csv(const DecileProfile& profile);

std::string records_jsonl(std::span<const EvalRecord> records, const std::string& config_hash);
std::vector<EvalRecord> read_records(const std::filesystem::path& path);

}  // namespace c3
