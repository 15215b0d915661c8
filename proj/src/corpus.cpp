#include "corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace c3 {

namespace {

constexpr std::uint64_t kAuxStream = 0x5EED00A0C3ULL;
constexpr std::uint64_t kModeStream = 0x3A0DE5C3ULL;

constexpr std::array<std::pair<CorpusMode, std::string_view>, 5> kModes{{
    {CorpusMode::kProse, "prose"},
    {CorpusMode::kSecondLanguage, "second_language"},
    {CorpusMode::kRandomChars, "random_chars"},
    {CorpusMode::kShuffled, "shuffled"},
    {CorpusMode::kMixed, "mixed"},
}};

constexpr std::array<std::string_view, 16> kNames{"Anna", "Ben",   "Clara", "David", "Elena", "Felix", "Grace", "Hugo",
                                                  "Iris", "Jonas", "Karen", "Leo",   "Maya",  "Noah",  "Olga",  "Paul"};
constexpr std::array<std::string_view, 24> kAdjectives{
    "quiet", "old",    "bright", "small", "heavy", "green",  "distant", "warm",  "broken", "gentle", "narrow", "patient",
    "tall",  "silver", "empty",  "quick", "cold",  "hidden", "simple",  "early", "strange", "careful", "wide",  "soft"};
constexpr std::array<std::string_view, 32> kNouns{
    "river",   "garden", "window", "letter", "market", "teacher", "bridge",  "forest", "engine", "story",  "village",
    "mountain", "table",  "doctor", "ship",   "lamp",   "road",    "student", "clock",  "field",  "castle", "machine",
    "harbor",  "painter", "song",  "winter", "kitchen", "station", "island",  "library", "friend", "storm"};
constexpr std::array<std::string_view, 24> kVerbs{
    "watched", "carried", "found",    "opened",  "followed", "built",   "painted",  "crossed",
    "visited", "repaired", "noticed", "described", "lifted", "closed",  "measured", "remembered",
    "cleaned", "moved",   "studied",  "answered", "pulled",  "counted", "explored", "protected"};
constexpr std::array<std::string_view, 12> kAdverbs{"slowly", "quietly", "again",   "carefully", "today",  "often",
                                                    "later",  "happily", "suddenly", "together", "rarely", "twice"};
constexpr std::array<std::string_view, 10> kPrepositions{"near",  "behind", "across", "under", "beside",
                                                         "above", "around", "toward", "inside", "past"};

template <std::size_t N>
std::string_view pick(Rng& rng, const std::array<std::string_view, N>& words) {
  return words[rng.below(N)];
}

std::string sentence(Rng& rng) {
  std::string s;
  auto noun_phrase = [&] {
    std::string p = rng.below(2) ? "the " : "a ";
    if (rng.below(2)) (p += pick(rng, kAdjectives)) += ' ';
    return p += pick(rng, kNouns);
  };
  switch (rng.below(5)) {
    case 0:
      s = noun_phrase() + " " + std::string(pick(rng, kVerbs)) + " " + noun_phrase();
      break;
    case 1:
      s = std::string(pick(rng, kNames)) + " " + std::string(pick(rng, kVerbs)) + " " + noun_phrase() + " " +
          std::string(pick(rng, kAdverbs));
      break;
    case 2:
      s = noun_phrase() + " " + std::string(pick(rng, kVerbs)) + " " + noun_phrase() + " " +
          std::string(pick(rng, kPrepositions)) + " " + noun_phrase();
      break;
    case 3:
      s = std::string(pick(rng, kNames)) + " and " + std::string(pick(rng, kNames)) + " " +
          std::string(pick(rng, kVerbs)) + " " + noun_phrase();
      break;
    default:
      s = std::string(pick(rng, kAdverbs)) + " " + noun_phrase() + " " + std::string(pick(rng, kVerbs)) + " " +
          std::string(pick(rng, kNames));
      break;
  }
  s[0] = char(std::toupper(static_cast<unsigned char>(s[0])));
  return s + ".";
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(char(cp));
  } else if (cp < 0x800) {
    out.push_back(char(0xC0 | (cp >> 6)));
    out.push_back(char(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(char(0xE0 | (cp >> 12)));
    out.push_back(char(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(char(0x80 | (cp & 0x3F)));
  }
}

// Frequent function and content characters of literary Chinese, in rough rank order.
constexpr std::array<char32_t, 48> kHanzi{
    0x4E4B, 0x800C, 0x4E0D, 0x4E5F, 0x4EE5, 0x5176, 0x8005, 0x4EBA, 0x66F0, 0x6709, 0x65BC, 0x70BA,
    0x6B64, 0x5B50, 0x5929, 0x5927, 0x5F97, 0x4E4E, 0x6240, 0x7121, 0x541B, 0x738B, 0x4E0B, 0x81EA,
    0x5C71, 0x6C34, 0x6708, 0x65E5, 0x98A8, 0x96F2, 0x5FC3, 0x9053, 0x5FB7, 0x4EC1, 0x7FA9, 0x79AE,
    0x6642, 0x5E74, 0x6625, 0x79CB, 0x82B1, 0x9CE5, 0x9577, 0x9060, 0x8A00, 0x805E, 0x898B, 0x884C};
constexpr char32_t kComma = 0xFF0C;
constexpr char32_t kFullStop = 0x3002;

std::uint64_t doc_seed(std::uint64_t seed, std::uint64_t id) { return splitmix64(seed ^ id); }

std::string base_text(CorpusMode mode, std::uint64_t ds, std::size_t length) {
  return mode == CorpusMode::kSecondLanguage ? second_language_text(ds, length) : prose_text(ds, length);
}

}  // namespace

std::string_view mode_name(CorpusMode mode) {
  for (const auto& [m, name] : kModes)
    if (m == mode) return name;
  return "unknown";
}

std::optional<CorpusMode> parse_mode(std::string_view name) {
  for (const auto& [m, n] : kModes)
    if (n == name) return m;
  return std::nullopt;
}

std::string valid_mode_list() {
  std::string s;
  for (const auto& [_, name] : kModes) (s += s.empty() ? "" : ", ") += name;
  return s;
}

std::string_view unit_name(ShuffleUnit unit) { return unit == ShuffleUnit::kSentence ? "sentence" : "word"; }

std::optional<ShuffleUnit> parse_unit(std::string_view name) {
  if (name == "sentence") return ShuffleUnit::kSentence;
  if (name == "word") return ShuffleUnit::kWord;
  return std::nullopt;
}

void CorpusSpec::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorKind::kInvalidArgument, "corpus spec: " + msg); };
  if (n_documents == 0) bad("n_documents must be at least 1");
  if (min_tokens == 0) bad("min length must be at least 1");
  if (min_tokens > max_tokens) {
    bad("min length " + std::to_string(min_tokens) + " exceeds max length " + std::to_string(max_tokens));
  }
  if (!(injection_rate >= 0.0 && injection_rate <= 1.0)) bad("injection_rate must lie in [0, 1]");
}

std::string prose_text(std::uint64_t ds, std::size_t length) {
  Rng rng(ds);
  std::string text;
  while (text.size() < length) {
    if (!text.empty()) text += ' ';
    text += sentence(rng);
  }
  text.resize(length);
  return text;
}

std::string second_language_text(std::uint64_t ds, std::size_t length) {
  Rng rng(ds);
  std::string text;
  std::size_t clause = 0;
  const std::size_t clause_len = 4 + rng.below(4);
  while (text.size() + 3 <= length) {
    if (clause == clause_len) {
      append_utf8(text, rng.below(3) == 0 ? kFullStop : kComma);
      clause = 0;
      continue;
    }
    // Zipf-like rank: squaring a uniform draw favors low ranks.
    const double u = rng.uniform();
    append_utf8(text, kHanzi[std::size_t(u * u * double(kHanzi.size()))]);
    ++clause;
  }
  text.append(length - text.size(), ' ');
  return text;
}

std::string_view unit_delimiter(ShuffleUnit unit) { return unit == ShuffleUnit::kSentence ? ". " : " "; }

std::vector<std::string> split_segments(std::string_view text, ShuffleUnit unit) {
  const auto delim = unit_delimiter(unit);
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(delim, start);
    if (pos == std::string_view::npos) {
      parts.emplace_back(text.substr(start));
      break;
    }
    parts.emplace_back(text.substr(start, pos - start));
    start = pos + delim.size();
  }
  return parts;
}

std::vector<Document> generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  std::vector<Document> docs;
  docs.reserve(spec.n_documents);
  for (std::uint64_t id = 0; id < spec.n_documents; ++id) {
    const std::uint64_t ds = doc_seed(spec.seed, id);
    Rng aux(ds ^ kAuxStream);
    Document doc;
    doc.id = id;
    doc.mode = spec.mode;
    if (doc.mode == CorpusMode::kMixed) {
      Rng pick_mode(ds ^ kModeStream);
      doc.mode = kModes[pick_mode.below(4)].first;
    }
    const std::size_t length = spec.min_tokens + aux.below(spec.max_tokens - spec.min_tokens + 1);
    doc.text = base_text(doc.mode, ds, length);
    if (doc.mode == CorpusMode::kRandomChars) {
      const auto k = std::size_t(std::llround(spec.injection_rate * double(length)));
      std::vector<std::size_t> positions(length);
      for (std::size_t i = 0; i < length; ++i) positions[i] = i;
      for (std::size_t i = 0; i < k; ++i) {
        std::swap(positions[i], positions[i + aux.below(length - i)]);
        doc.text[positions[i]] = char(0x21 + aux.below(0x7E - 0x21 + 1));
      }
    } else if (doc.mode == CorpusMode::kShuffled) {
      auto segments = split_segments(doc.text, spec.shuffle_unit);
      for (std::size_t i = segments.size(); i > 1; --i) std::swap(segments[i - 1], segments[aux.below(i)]);
      std::string joined;
      for (std::size_t i = 0; i < segments.size(); ++i) {
        if (i) joined += unit_delimiter(spec.shuffle_unit);
        joined += segments[i];
      }
      doc.text = std::move(joined);
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::pair<std::vector<Document>, std::vector<Document>> split_corpus(const std::vector<Document>& corpus,
                                                                     double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    fail(ErrorKind::kInvalidArgument, "train fraction must lie strictly between 0 and 1");
  }
  const auto n_train = std::size_t(std::llround(train_fraction * double(corpus.size())));
  if (n_train == 0 || n_train == corpus.size()) {
    fail(ErrorKind::kInvalidArgument, "split of " + std::to_string(corpus.size()) + " documents at fraction " +
                                          std::to_string(train_fraction) + " leaves one side empty");
  }
  std::vector<std::size_t> idx(corpus.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  std::vector<std::uint8_t> in_train(corpus.size(), 0);
  for (std::size_t i = 0; i < n_train; ++i) in_train[idx[i]] = 1;
  std::pair<std::vector<Document>, std::vector<Document>> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) (in_train[i] ? out.first : out.second).push_back(corpus[i]);
  return out;
}

std::string corpus_jsonl(const std::vector<Document>& docs) {
  std::string out;
  for (const auto& d : docs) {
    nlohmann::ordered_json j{{"id", d.id}, {"mode", mode_name(d.mode)}, {"text", d.text}};
    try {
      out += j.dump();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kInvalidArgument, "document " + std::to_string(d.id) + " is not valid UTF-8: " + e.what());
    }
    out += '\n';
  }
  return out;
}

void write_corpus(const std::filesystem::path& path, const std::vector<Document>& docs) {
  const auto text = corpus_jsonl(docs);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write corpus " + path.string());
  out << text;
  if (!out) fail(ErrorKind::kIo, "short write to corpus " + path.string());
}

std::vector<Document> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open corpus " + path.string());
  std::vector<Document> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      Document d;
      d.id = j.at("id").get<std::uint64_t>();
      const auto mode = parse_mode(j.at("mode").get<std::string>());
      if (!mode || *mode == CorpusMode::kMixed) fail(ErrorKind::kFormat, where + ": unknown document mode");
      d.mode = *mode;
      d.text = j.at("text").get<std::string>();
      docs.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kFormat, where + ": " + e.what());
    }
  }
  return docs;
}

}  // namespace c3
