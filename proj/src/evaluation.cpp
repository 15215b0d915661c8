#include "evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "error.hpp"

namespace c3 {

std::size_t levenshtein(std::span<const Token> a, std::span<const Token> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j - 1] + (a[i - 1] != b[j - 1] ? 1 : 0), prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::vector<Edit> align(std::span<const Token> ref, std::span<const Token> hyp) {
  const std::size_t n = ref.size(), m = hyp.size(), w = m + 1;
  // cost[i*w + j] = distance between ref[i:] and hyp[j:]
  std::vector<std::size_t> cost((n + 1) * w);
  for (std::size_t i = n + 1; i-- > 0;) {
    for (std::size_t j = m + 1; j-- > 0;) {
      std::size_t& c = cost[i * w + j];
      if (i == n) {
        c = m - j;
      } else if (j == m) {
        c = n - i;
      } else {
        c = std::min({cost[(i + 1) * w + j + 1] + (ref[i] != hyp[j] ? 1 : 0), cost[i * w + j + 1] + 1,
                      cost[(i + 1) * w + j] + 1});
      }
    }
  }
  std::vector<Edit> edits;
  std::size_t i = 0, j = 0;
  while (i < n || j < m) {
    const std::size_t here = cost[i * w + j];
    if (i < n && j < m) {
      const std::size_t sub = ref[i] != hyp[j] ? 1 : 0;
      if (here == cost[(i + 1) * w + j + 1] + sub) {
        if (sub) edits.push_back({EditKind::kSubstitution, i});
        ++i;
        ++j;
        continue;
      }
    }
    if (j < m && here == cost[i * w + j + 1] + 1) {
      edits.push_back({EditKind::kInsertion, i});
      ++j;
    } else {
      edits.push_back({EditKind::kDeletion, i});
      ++i;
    }
  }
  return edits;
}

double precision(std::span<const Token> reference, std::span<const Token> hypothesis) {
  if (reference.empty()) fail(ErrorKind::kInvalidArgument, "precision needs a non-empty reference");
  const double dist = double(levenshtein(reference, hypothesis));
  const double denom = double(std::max(reference.size(), hypothesis.size()));
  return std::clamp(1.0 - dist / denom, 0.0, 1.0);
}

double compression_ratio(std::size_t text_token_count, std::size_t latent_count) {
  if (latent_count == 0) fail(ErrorKind::kInvalidArgument, "compression ratio with zero latent tokens");
  if (text_token_count == 0) fail(ErrorKind::kInvalidArgument, "compression ratio of an empty text");
  return double(text_token_count) / double(latent_count);
}

EvalRecord score(std::uint64_t id, std::span<const Token> reference, std::span<const Token> hypothesis,
                 std::size_t latent_count) {
  EvalRecord r;
  r.id = id;
  r.text_token_count = reference.size();
  r.latent_count = latent_count;
  r.compression_ratio = compression_ratio(reference.size(), latent_count);
  r.precision = precision(reference, hypothesis);
  const double n = double(reference.size());
  for (const auto& e : align(reference, hypothesis)) r.error_positions.push_back(double(e.ref_index) / n);
  return r;
}

std::vector<EvalRecord> evaluate(const CascadeModel<float>& model, const std::vector<Document>& docs,
                                 std::size_t max_new_tokens, std::size_t workers) {
  std::vector<EvalRecord> records(docs.size());
  const std::size_t n_latent = model.config.n_latent;
  auto run = [&](std::size_t worker, std::size_t stride) {
    for (std::size_t i = worker; i < docs.size(); i += stride) {
      const auto ref = docs[i].tokens();
      const std::size_t limit = max_new_tokens > 0 ? max_new_tokens : ref.size() + 16;
      const auto gen = reconstruct(model, ref, limit);
      records[i] = score(docs[i].id, ref, gen.tokens, n_latent);
      records[i].truncated = !gen.hit_eos;
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(docs.size(), 1));
  if (workers == 1) {
    run(0, 1);
    return records;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          run(w, workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return records;
}

namespace {

std::size_t decile_of(double pos) {
  const auto d = static_cast<long>(std::floor(pos * 10.0 + 1e-9));
  return std::size_t(std::clamp<long>(d, 0, 9));
}

void finish(BinStats& b, double sum_p, double sum_r) {
  if (b.count == 0) return;
  b.mean_precision = sum_p / double(b.count);
  b.mean_ratio = sum_r / double(b.count);
}

nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json bin_json(const BinStats& b) {
  return {{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"mean_precision", opt(b.mean_precision)},
          {"mean_ratio", opt(b.mean_ratio)}};
}

std::string csv_num(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(10);
  os << *v;
  return os.str();
}

}  // namespace

DecileProfile positional_error_profile(std::span<const EvalRecord> records) {
  std::array<std::size_t, 10> counts{};
  std::size_t total = 0;
  for (const auto& r : records) {
    for (double p : r.error_positions) {
      ++counts[decile_of(p)];
      ++total;
    }
  }
  DecileProfile profile;
  if (total == 0) return profile;
  for (std::size_t d = 0; d < 10; ++d) profile[d] = double(counts[d]) / double(total);
  return profile;
}

EvalReport bin_report(std::span<const EvalRecord> records, std::span<const std::size_t> bin_edges,
                      std::size_t n_latent) {
  for (std::size_t i = 1; i < bin_edges.size(); ++i) {
    if (bin_edges[i] <= bin_edges[i - 1]) fail(ErrorKind::kInvalidArgument, "bin edges must be strictly increasing");
  }
  EvalReport rep;
  rep.n_latent = n_latent;
  rep.total = records.size();
  const std::size_t n_bins = bin_edges.size() < 2 ? 0 : bin_edges.size() - 1;
  rep.bins.resize(n_bins);
  std::vector<double> sum_p(n_bins, 0.0), sum_r(n_bins, 0.0);
  double over_p = 0, over_r = 0, all_p = 0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    rep.bins[b].lo = bin_edges[b];
    rep.bins[b].hi = bin_edges[b + 1];
  }
  for (const auto& r : records) {
    all_p += r.precision;
    const std::size_t len = r.text_token_count;
    std::size_t bin = n_bins;
    for (std::size_t b = 0; b < n_bins; ++b) {
      const bool last = b + 1 == n_bins;
      if (len >= bin_edges[b] && (len < bin_edges[b + 1] || (last && len == bin_edges[b + 1]))) {
        bin = b;
        break;
      }
    }
    if (bin == n_bins) {
      ++rep.overflow.count;
      over_p += r.precision;
      over_r += r.compression_ratio;
    } else {
      ++rep.bins[bin].count;
      sum_p[bin] += r.precision;
      sum_r[bin] += r.compression_ratio;
    }
  }
  for (std::size_t b = 0; b < n_bins; ++b) finish(rep.bins[b], sum_p[b], sum_r[b]);
  finish(rep.overflow, over_p, over_r);
  if (!records.empty()) rep.mean_precision = all_p / double(records.size());
  rep.deciles = positional_error_profile(records);
  return rep;
}

std::string report_json(const EvalReport& report, const std::string& config_hash) {
  nlohmann::ordered_json bins = nlohmann::ordered_json::array();
  for (const auto& b : report.bins) bins.push_back(bin_json(b));
  nlohmann::ordered_json deciles = nlohmann::ordered_json::array();
  for (const auto& d : report.deciles) deciles.push_back(opt(d));
  nlohmann::ordered_json j{{"config_hash", config_hash},
                           {"n_latent", report.n_latent},
                           {"documents", report.total},
                           {"mean_precision", opt(report.mean_precision)},
                           {"bins", bins},
                           {"overflow", bin_json(report.overflow)},
                           {"deciles", deciles}};
  return j.dump(2) + "\n";
}

std::string report_csv(const EvalReport& report) {
  std::string out = "bin_lo,bin_hi,count,mean_precision,mean_ratio\n";
  for (const auto& b : report.bins) {
    out += std::to_string(b.lo) + "," + std::to_string(b.hi) + "," + std::to_string(b.count) + "," +
           csv_num(b.mean_precision) + "," + csv_num(b.mean_ratio) + "\n";
  }
  return out;
}

std::string deciles_csv(const DecileProfile& profile) {
  std::string out = "decile,lo,hi,fraction\n";
  for (std::size_t d = 0; d < 10; ++d) {
    out += std::to_string(d + 1) + "," + csv_num(double(d) / 10.0) + "," + csv_num(double(d + 1) / 10.0) + "," +
           csv_num(profile[d]) + "\n";
  }
  return out;
}

std::string records_jsonl(std::span<const EvalRecord> records, const std::string& config_hash) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j{{"id", r.id},
                             {"text_token_count", r.text_token_count},
                             {"latent_count", r.latent_count},
                             {"compression_ratio", r.compression_ratio},
                             {"precision", r.precision},
                             {"error_positions", r.error_positions},
                             {"truncated", r.truncated},
                             {"config_hash", config_hash}};
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<EvalRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open records " + path.string());
  std::vector<EvalRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EvalRecord r;
      r.id = j.at("id").get<std::uint64_t>();
      r.text_token_count = j.at("text_token_count").get<std::size_t>();
      r.latent_count = j.at("latent_count").get<std::size_t>();
      r.compression_ratio = j.at("compression_ratio").get<double>();
      r.precision = j.at("precision").get<double>();
      r.error_positions = j.at("error_positions").get<std::vector<double>>();
      r.truncated = j.value("truncated", false);
      for (double p : r.error_positions) {
        if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::kFormat, "error position outside [0, 1]");
      }
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kFormat, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      fail(ErrorKind::kFormat, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace c3
