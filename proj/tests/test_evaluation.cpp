#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "config_io.hpp"
#include "doctest.h"
#include "evaluation.hpp"
#include "test_util.hpp"

using namespace c3;
using namespace c3::testing;

namespace {

// Full-matrix edit distance, written independently of the library's rolling rows.
std::size_t edit_distance_oracle(const TokenSequence& a, const TokenSequence& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      d[i][j] = std::min(sub, std::min(d[i - 1][j], d[i][j - 1]) + 1);
    }
  }
  return d[a.size()][b.size()];
}

TokenSequence random_ids(std::size_t n, std::mt19937_64& rng, Token alphabet) {
  TokenSequence ids(n);
  for (auto& t : ids) t = Token(rng() % std::uint64_t(alphabet));
  return ids;
}

TokenSequence seq(const std::string& s) { return TokenSequence(s.begin(), s.end()); }

EvalRecord record(std::size_t len, double precision, std::size_t latents, std::vector<double> errors = {}) {
  EvalRecord r;
  r.text_token_count = len;
  r.latent_count = latents;
  r.compression_ratio = double(len) / double(latents);
  r.precision = precision;
  r.error_positions = std::move(errors);
  return r;
}

}  // namespace

TEST_CASE("levenshtein agrees with a full-matrix oracle") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = random_ids(rng() % 51, rng, 4);
    const auto b = random_ids(rng() % 51, rng, 4);
    REQUIRE(levenshtein(a, b) == edit_distance_oracle(a, b));
    REQUIRE(levenshtein(b, a) == levenshtein(a, b));
  }
  CHECK(levenshtein(seq("kitten"), seq("sitting")) == 3);
  CHECK(levenshtein(seq(""), seq("abc")) == 3);
}

TEST_CASE("precision examples") {
  CHECK(precision(seq("abc"), seq("abc")) == 1.0);
  CHECK(precision(seq("abc"), seq("abd")) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(precision(seq("abc"), seq("")) == 0.0);
  // Longer hypotheses are normalized by their own length.
  CHECK(precision(seq("ab"), seq("abcd")) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(precision(seq("abc"), seq("xyzuvw")) == 0.0);
  CHECK_THROWS_AS(precision(seq(""), seq("a")), Error);
}

TEST_CASE("compression ratio examples") {
  CHECK(compression_ratio(640, 64) == 10.0);
  CHECK(compression_ratio(672, 64) == 10.5);
  CHECK(compression_ratio(1260, 32) == 39.375);
  CHECK(std::round(compression_ratio(1260, 32) * 10.0) / 10.0 == doctest::Approx(39.4));
  CHECK_THROWS_AS(compression_ratio(10, 0), Error);
  CHECK_THROWS_AS(compression_ratio(0, 4), Error);
}

TEST_CASE("alignment is minimal and follows the tie rules") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = random_ids(1 + rng() % 30, rng, 3);
    const auto b = random_ids(rng() % 30, rng, 3);
    const auto edits = align(a, b);
    REQUIRE(edits.size() == edit_distance_oracle(a, b));
    for (const auto& e : edits) REQUIRE(e.ref_index <= a.size());
  }
  // A single substitution in the middle.
  auto e = align(seq("abcde"), seq("abXde"));
  REQUIRE(e.size() == 1);
  CHECK(e[0].kind == EditKind::kSubstitution);
  CHECK(e[0].ref_index == 2);
  // Truncation: the missing tail is deleted in order.
  e = align(seq("abcd"), seq("ab"));
  REQUIRE(e.size() == 2);
  CHECK(e[0].kind == EditKind::kDeletion);
  CHECK(e[0].ref_index == 2);
  CHECK(e[1].ref_index == 3);
  // Extra output after the reference is an insertion at the end slot.
  e = align(seq("ab"), seq("abz"));
  REQUIRE(e.size() == 1);
  CHECK(e[0].kind == EditKind::kInsertion);
  CHECK(e[0].ref_index == 2);
  // "ab" vs "ba": substitutions win the tie against an insert/delete pair.
  e = align(seq("ab"), seq("ba"));
  REQUIRE(e.size() == 2);
  CHECK(e[0].kind == EditKind::kSubstitution);
  CHECK(e[1].kind == EditKind::kSubstitution);
  // Repeated tokens: the earliest match is taken, so the deletion falls last.
  e = align(seq("aa"), seq("a"));
  REQUIRE(e.size() == 1);
  CHECK(e[0].kind == EditKind::kDeletion);
  CHECK(e[0].ref_index == 1);
}

TEST_CASE("score fills a record") {
  const auto r = score(7, seq("abcdefghij"), seq("abcdefghiX"), 2);
  CHECK(r.id == 7);
  CHECK(r.text_token_count == 10);
  CHECK(r.latent_count == 2);
  CHECK(r.compression_ratio == 5.0);
  CHECK(r.precision == doctest::Approx(0.9));
  REQUIRE(r.error_positions.size() == 1);
  CHECK(r.error_positions[0] == doctest::Approx(0.9));
  CHECK(score(1, seq("abc"), seq("abc"), 1).error_positions.empty());
}

TEST_CASE("bin report matches a direct recomputation") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<EvalRecord> records;
  for (int i = 0; i < 100; ++i) records.push_back(record(32 + rng() % 300, unit(rng), 8));
  const std::vector<std::size_t> edges = {64, 96, 128, 192, 256};
  const auto rep = bin_report(records, edges, 8);
  REQUIRE(rep.bins.size() == 4);
  std::size_t counted = rep.overflow.count;
  for (std::size_t b = 0; b < 4; ++b) {
    const bool last = b == 3;
    std::size_t n = 0;
    double sp = 0, sr = 0;
    for (const auto& r : records) {
      const auto len = r.text_token_count;
      if (len >= edges[b] && (len < edges[b + 1] || (last && len == edges[b + 1]))) {
        ++n;
        sp += r.precision;
        sr += r.compression_ratio;
      }
    }
    CHECK(rep.bins[b].lo == edges[b]);
    CHECK(rep.bins[b].hi == edges[b + 1]);
    CHECK(rep.bins[b].count == n);
    REQUIRE(n > 0);
    CHECK(*rep.bins[b].mean_precision == doctest::Approx(sp / double(n)).epsilon(1e-12));
    CHECK(*rep.bins[b].mean_ratio == doctest::Approx(sr / double(n)).epsilon(1e-12));
    counted += rep.bins[b].count;
  }
  CHECK(counted == records.size());
  CHECK(rep.total == 100);
  CHECK(rep.overflow.count > 0);
  double all = 0;
  for (const auto& r : records) all += r.precision;
  CHECK(*rep.mean_precision == doctest::Approx(all / 100.0).epsilon(1e-12));
}

TEST_CASE("bins without documents have undefined means") {
  const std::vector<EvalRecord> records = {record(70, 1.0, 8), record(256, 0.5, 8), record(300, 0.25, 8)};
  const std::vector<std::size_t> edges = {64, 96, 128, 256};
  const auto rep = bin_report(records, edges, 8);
  CHECK(rep.bins[0].count == 1);
  CHECK(rep.bins[1].count == 0);
  CHECK_FALSE(rep.bins[1].mean_precision.has_value());
  CHECK_FALSE(rep.bins[1].mean_ratio.has_value());
  CHECK(rep.bins[2].count == 1);  // the last bin includes its upper edge
  CHECK(rep.overflow.count == 1);
  CHECK(*rep.overflow.mean_precision == 0.25);
  const std::vector<std::size_t> bad = {64, 64};
  CHECK_THROWS_AS(bin_report(records, bad, 8), Error);
  const auto none = bin_report({}, edges, 8);
  CHECK_FALSE(none.mean_precision.has_value());
}

TEST_CASE("truncated reconstructions put every error in the last decile") {
  std::vector<EvalRecord> records;
  for (std::size_t n : {50u, 100u, 120u}) {
    TokenSequence ref(n);
    for (std::size_t i = 0; i < n; ++i) ref[i] = Token(i % 256);
    const TokenSequence hyp(ref.begin(), ref.begin() + std::ptrdiff_t(n - n / 10));
    records.push_back(score(0, ref, hyp, 4));
  }
  const auto profile = positional_error_profile(records);
  CHECK(*profile[9] == 1.0);
  for (std::size_t d = 0; d < 9; ++d) CHECK(*profile[d] == 0.0);
}

TEST_CASE("uniform substitutions give a flat profile") {
  std::mt19937_64 rng(4);
  std::vector<EvalRecord> records;
  const std::size_t n = 100, docs = 10000;
  for (std::size_t k = 0; k < docs; ++k) {
    TokenSequence ref(n);
    for (std::size_t i = 0; i < n; ++i) ref[i] = Token(i);
    auto hyp = ref;
    const std::size_t at = rng() % n;
    hyp[at] = Token(200);
    records.push_back(score(k, ref, hyp, 4));
  }
  const auto profile = positional_error_profile(records);
  const double sigma = std::sqrt(0.1 * 0.9 / double(docs));
  double total = 0;
  for (const auto& f : profile) {
    REQUIRE(f.has_value());
    CHECK(std::abs(*f - 0.1) <= 3.0 * sigma);
    total += *f;
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("no errors leaves every decile undefined") {
  const std::vector<EvalRecord> records = {score(0, seq("abc"), seq("abc"), 1)};
  for (const auto& f : positional_error_profile(records)) CHECK_FALSE(f.has_value());
  for (const auto& f : positional_error_profile({})) CHECK_FALSE(f.has_value());
  CHECK(deciles_csv(positional_error_profile(records)).find("1,0,0.1,\n") != std::string::npos);
}

TEST_CASE("decile boundaries") {
  // 0.1 belongs to the second decile, 1.0 to the tenth.
  const std::vector<EvalRecord> records = {record(10, 0.5, 1, {0.0, 0.1, 0.3, 0.99, 1.0})};
  const auto p = positional_error_profile(records);
  CHECK(*p[0] == 0.2);
  CHECK(*p[1] == 0.2);
  CHECK(*p[3] == 0.2);
  CHECK(*p[9] == 0.4);
}

TEST_CASE("report formats") {
  const std::vector<EvalRecord> records = {record(70, 1.0, 8), record(100, 0.5, 8, {0.5})};
  const std::vector<std::size_t> edges = {64, 96, 128, 192};
  const auto rep = bin_report(records, edges, 8);
  CHECK(report_csv(rep) ==
        "bin_lo,bin_hi,count,mean_precision,mean_ratio\n"
        "64,96,1,1,8.75\n"
        "96,128,1,0.5,12.5\n"
        "128,192,0,,\n");
  const auto j = Json::parse(report_json(rep, "feedface"));
  CHECK(j.at("config_hash") == "feedface");
  CHECK(j.at("n_latent") == 8);
  CHECK(j.at("documents") == 2);
  CHECK(j.at("mean_precision").get<double>() == 0.75);
  CHECK(j.at("bins").size() == 3);
  CHECK(j.at("bins")[2].at("mean_precision").is_null());
  CHECK(j.at("deciles").size() == 10);
  CHECK(j.at("deciles")[5] == 1.0);
  CHECK(j.at("deciles")[0] == 0.0);
  const auto csv = deciles_csv(rep.deciles);
  CHECK(csv.rfind("decile,lo,hi,fraction\n1,0,0.1,0\n", 0) == 0);
  CHECK(csv.find("6,0.5,0.6,1\n") != std::string::npos);
}

TEST_CASE("records round trip through JSON lines") {
  const auto dir = temp_dir("records");
  std::vector<EvalRecord> records = {record(70, 1.0, 8), record(100, 0.5, 8, {0.5, 0.25})};
  records[0].id = 3;
  records[1].truncated = true;
  {
    std::ofstream out(dir / "r.jsonl");
    out << records_jsonl(records, "abc");
  }
  const auto back = read_records(dir / "r.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == 3);
  CHECK(back[1].error_positions == records[1].error_positions);
  CHECK(back[1].truncated);
  CHECK(back[1].compression_ratio == 12.5);
  {
    std::ofstream out(dir / "bad.jsonl");
    out << "{\"id\":1,\"text_token_count\":3,\"latent_count\":1,\"compression_ratio\":3,\"precision\":1,"
           "\"error_positions\":[1.5]}\n";
  }
  CHECK_THROWS_AS(read_records(dir / "bad.jsonl"), Error);
  CHECK_THROWS_AS(read_records(dir / "missing.jsonl"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("evaluate scores every document and is independent of the worker count") {
  auto model = CascadeModel<float>::init(small_cascade(4, 32), 5);
  std::mt19937_64 rng(6);
  std::vector<Document> docs;
  for (std::uint64_t i = 0; i < 5; ++i) {
    Document d;
    d.id = i;
    d.mode = CorpusMode::kProse;
    d.text = std::string(8 + rng() % 20, 'a');
    for (auto& c : d.text) c = char('a' + rng() % 26);
    docs.push_back(d);
  }
  const auto one = evaluate(model, docs, 0, 1);
  const auto three = evaluate(model, docs, 0, 3);
  REQUIRE(one.size() == docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    CHECK(one[i].id == docs[i].id);
    CHECK(one[i].text_token_count == docs[i].token_count());
    CHECK(one[i].latent_count == 4);
    CHECK(one[i].precision == three[i].precision);
    CHECK(one[i].error_positions == three[i].error_positions);
    CHECK((one[i].precision >= 0.0 && one[i].precision <= 1.0));
  }
  // A limit of one token can never reproduce a multi-token text.
  for (const auto& r : evaluate(model, docs, 1, 2)) CHECK(r.precision < 1.0);
}
