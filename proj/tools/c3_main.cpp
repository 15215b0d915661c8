// c3: corpus generation, training, evaluation and analysis for cascade models.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "c3/c3.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

int report(c3_status status, const char* command) {
  if (status == C3_OK) return kExitOk;
  std::fprintf(stderr, "c3 %s: %s: %s\n", command, c3_status_name(status), c3_last_error());
  return status == C3_ERR_INVALID_ARGUMENT ? kExitUsage : kExitRuntime;
}

int usage(const char* command, const std::string& message) {
  std::fprintf(stderr, "c3 %s: %s\n", command, message.c_str());
  return kExitUsage;
}

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  unsigned workers = 1;
};

struct CorpusFlags {
  std::uint64_t n = 0;
  std::uint64_t min = 0;
  std::uint64_t max = 0;
  std::string mode = "prose";
  double injection_rate = 0.0;
  std::string shuffle_unit = "sentence";
  std::string out;
};

struct EvalFlags {
  std::string checkpoint;
  std::string corpus;
  std::string bins;
  std::uint64_t max_new_tokens = 0;
};

std::optional<std::vector<std::uint64_t>> parse_bins(const std::string& text) {
  std::vector<std::uint64_t> edges;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string field = text.substr(pos, comma - pos);
    if (field.empty() || field.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
    edges.push_back(std::stoull(field));
    pos = comma + 1;
  }
  return edges;
}

int cmd_gen_corpus(const GlobalFlags& g, const CorpusFlags& f) {
  c3_corpus_spec spec;
  c3_corpus_spec_default(&spec);
  if (g.seed) spec.seed = *g.seed;
  if (f.n > 0) spec.n_documents = f.n;
  if (f.min > 0) spec.min_tokens = f.min;
  if (f.max > 0) spec.max_tokens = f.max;
  spec.mode = f.mode.c_str();
  spec.injection_rate = f.injection_rate;
  spec.shuffle_unit = f.shuffle_unit.c_str();
  std::string out = f.out;
  if (out.empty()) {
    if (g.out_dir.empty()) return usage("gen-corpus", "--out or --out-dir is required");
    out = g.out_dir + "/corpus.jsonl";
  }
  std::uint64_t written = 0;
  const int code = report(c3_corpus_generate(&spec, out.c_str(), &written), "gen-corpus");
  if (code == kExitOk) std::fprintf(stderr, "wrote %llu documents to %s\n", (unsigned long long)written, out.c_str());
  return code;
}

void print_step(std::int64_t step, double lr, double loss, void*) {
  if (step == 1 || step % 50 == 0) std::fprintf(stderr, "step %lld  lr %.3e  loss %.6f\n", (long long)step, lr, loss);
}

int cmd_train(const GlobalFlags& g, const std::string& resume, bool quiet) {
  if (g.config.empty()) return usage("train", "--config is required");
  c3_train_options o{};
  o.config_path = g.config.c_str();
  o.out_dir = g.out_dir.empty() ? nullptr : g.out_dir.c_str();
  o.resume_path = resume.empty() ? nullptr : resume.c_str();
  o.has_seed = g.seed.has_value();
  o.seed = g.seed.value_or(0);
  o.on_step = quiet ? nullptr : print_step;
  c3_train_summary s{};
  const int code = report(c3_train_run(&o, &s), "train");
  if (code == kExitOk) {
    std::fprintf(stderr, "trained steps %lld..%lld on %llu documents, final loss %.6f%s, config %s\n",
                 (long long)s.start_step, (long long)s.final_step, (unsigned long long)s.n_documents, s.final_loss,
                 s.stopped_on_loss ? " (stop_loss reached)" : "", s.config_hash);
  }
  return code;
}

int cmd_eval(const GlobalFlags& g, const EvalFlags& f) {
  if (f.checkpoint.empty()) return usage("eval", "--checkpoint is required");
  std::vector<std::uint64_t> edges;
  if (!f.bins.empty()) {
    auto parsed = parse_bins(f.bins);
    if (!parsed) return usage("eval", "--bins must be a comma-separated list of integers");
    edges = std::move(*parsed);
  }
  c3_eval_options o{};
  o.checkpoint_path = f.checkpoint.c_str();
  o.corpus_path = f.corpus.empty() ? nullptr : f.corpus.c_str();
  o.config_path = g.config.empty() ? nullptr : g.config.c_str();
  o.bin_edges = edges.empty() ? nullptr : edges.data();
  o.n_bin_edges = edges.size();
  o.max_new_tokens = f.max_new_tokens;
  o.workers = g.workers;
  o.out_dir = g.out_dir.empty() ? nullptr : g.out_dir.c_str();
  c3_eval_summary s{};
  const int code = report(c3_eval_run(&o, &s), "eval");
  if (code == kExitOk) {
    std::printf("documents %llu  exact %llu  mean_precision %.6f  bins %llu\n", (unsigned long long)s.documents,
                (unsigned long long)s.exact_matches, s.mean_precision, (unsigned long long)s.n_bins);
  }
  return code;
}

int cmd_repeat(const std::string& checkpoint, const std::string& text, std::uint64_t max_new_tokens) {
  if (checkpoint.empty()) return usage("repeat", "--checkpoint is required");
  if (text.empty()) return usage("repeat", "--text must not be empty");
  c3_model* model = nullptr;
  if (const int code = report(c3_model_load(checkpoint.c_str(), &model), "repeat"); code != kExitOk) return code;
  c3_bytes out{};
  const c3_status status = c3_model_repeat(model, reinterpret_cast<const std::uint8_t*>(text.data()), text.size(),
                                           max_new_tokens, &out);
  const int code = report(status, "repeat");
  if (code == kExitOk) {
    std::fwrite(out.data, 1, out.size, stdout);
    std::fflush(stdout);
  }
  c3_bytes_free(&out);
  c3_model_free(model);
  return code;
}

int cmd_analyze(const GlobalFlags& g, const std::string& records) {
  if (records.empty()) return usage("analyze", "--records is required");
  c3_profile p{};
  const int code =
      report(c3_analyze_run(records.c_str(), g.out_dir.empty() ? nullptr : g.out_dir.c_str(), &p), "analyze");
  if (code != kExitOk) return code;
  std::printf("records %llu  errors %llu\n", (unsigned long long)p.records, (unsigned long long)p.errors);
  for (int d = 0; d < 10; ++d) {
    if (p.defined) {
      std::printf("decile %d  [%.1f, %.1f)  %.6f\n", d + 1, d / 10.0, (d + 1) / 10.0, p.fraction[d]);
    } else {
      std::printf("decile %d  [%.1f, %.1f)  null\n", d + 1, d / 10.0, (d + 1) / 10.0);
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context cascade compression: compress text into latent tokens and reconstruct it"};
  app.require_subcommand(1);

  GlobalFlags g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--seed", g.seed, "Seed override");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_option("--workers", g.workers, "Evaluation worker threads")->check(CLI::PositiveNumber);
  app.set_version_flag("--version", std::string(c3_version()));

  CorpusFlags cf;
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic JSON-lines corpus")->fallthrough();
  gen->add_option("--n", cf.n, "Number of documents");
  gen->add_option("--min", cf.min, "Minimum document length in byte tokens");
  gen->add_option("--max", cf.max, "Maximum document length in byte tokens");
  gen->add_option("--mode", cf.mode, "prose | second_language | random_chars | shuffled | mixed");
  gen->add_option("--injection-rate", cf.injection_rate, "Character replacement rate for random_chars");
  gen->add_option("--shuffle-unit", cf.shuffle_unit, "sentence | word");
  gen->add_option("--out", cf.out, "Output file (default: <out-dir>/corpus.jsonl)");

  std::string resume;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train a cascade model from a config")->fallthrough();
  train->add_option("--resume", resume, "Checkpoint to continue from");
  train->add_flag("--quiet", quiet, "Suppress per-step progress");

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "Reconstruct a corpus and write precision reports")->fallthrough();
  eval->add_option("--checkpoint", ef.checkpoint, "Model checkpoint")->required();
  eval->add_option("--corpus", ef.corpus, "Corpus to evaluate (default: the config's training corpus)");
  eval->add_option("--bins", ef.bins, "Comma-separated token-count bin edges, e.g. 64,96,128");
  eval->add_option("--max-new-tokens", ef.max_new_tokens, "Generation limit (default: length + 16)");

  std::string rcheckpoint;
  std::string text;
  std::uint64_t rmax = 0;
  auto* repeat = app.add_subcommand("repeat", "Compress and reconstruct one text")->fallthrough();
  repeat->add_option("--checkpoint", rcheckpoint, "Model checkpoint")->required();
  repeat->add_option("--text", text, "Text to reconstruct")->required();
  repeat->add_option("--max-new-tokens", rmax, "Generation limit (default: length + 16)");

  std::string records;
  auto* analyze = app.add_subcommand("analyze", "Positional error profile from evaluation records")->fallthrough();
  analyze->add_option("--records", records, "records.jsonl from eval")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (*gen) return cmd_gen_corpus(g, cf);
  if (*train) return cmd_train(g, resume, quiet);
  if (*eval) return cmd_eval(g, ef);
  if (*repeat) return cmd_repeat(rcheckpoint, text, rmax);
  if (*analyze) return cmd_analyze(g, records);
  return kExitUsage;
}
