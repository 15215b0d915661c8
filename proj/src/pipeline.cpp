#include "pipeline.hpp"

#include <algorithm>
#include <fstream>

#include "checkpoint.hpp"

namespace c3 {

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::kIo, "short write to " + path.string());
}

TrainRunSummary run_training(const TrainRunOptions& options) {
  auto exp = load_experiment(options.config_path);
  if (options.seed) exp.train.seed = *options.seed;
  if (options.out_dir) exp.out_dir = *options.out_dir;
  if (exp.out_dir.empty()) fail(ErrorKind::kInvalidArgument, "no output directory (config.out_dir or --out-dir)");
  const auto docs = exp.load_training_documents();
  if (docs.empty()) fail(ErrorKind::kInvalidArgument, "training corpus is empty");
  std::vector<TokenSequence> corpus;
  corpus.reserve(docs.size());
  for (const auto& d : docs) corpus.push_back(d.tokens());

  const std::string hash = exp.hash();
  CascadeModel<float> model;
  TrainState<float> state;
  if (options.resume) {
    auto ck = load_checkpoint<float>(*options.resume);
    if (!(ck.model.config == exp.model)) {
      fail(ErrorKind::kInvalidArgument, "checkpoint " + options.resume->string() + " was trained with a different model config");
    }
    if (ck.state.adam.m.empty()) ck.state.adam = fresh_train_state(ck.model, corpus.size(), exp.train).adam;
    model = std::move(ck.model);
    state = std::move(ck.state);
  } else {
    model = CascadeModel<float>::init(exp.model, exp.train.seed);
    state = fresh_train_state(model, corpus.size(), exp.train);
  }

  std::filesystem::create_directories(exp.out_dir);
  Json manifest{{"config", exp.to_json()}, {"config_hash", hash}, {"parameter_count", model.parameter_count()}};
  write_text_file(exp.out_dir / "run.json", manifest.dump(2) + "\n");

  TrainRunSummary summary;
  summary.start_step = state.step();
  summary.n_documents = corpus.size();
  summary.config_hash = hash;
  TrainOptions topt;
  topt.out_dir = exp.out_dir;
  topt.config_hash = hash;
  topt.on_step = options.on_step;
  const auto result = train(model, state, corpus, exp.train, topt);
  summary.final_step = state.step();
  summary.final_loss = state.last_loss;
  summary.stopped_on_loss = result.stopped_on_loss;
  summary.checkpoint = result.checkpoint;
  return summary;
}

EvalRunSummary run_evaluation(const EvalRunOptions& options) {
  const auto ck = load_checkpoint<float>(options.checkpoint);
  if (!std::filesystem::exists(options.corpus)) {
    fail(ErrorKind::kInvalidArgument, "corpus not found: " + options.corpus.string());
  }
  const auto docs = read_corpus(options.corpus);
  std::vector<std::size_t> bins = options.bins;
  if (bins.empty()) {
    std::size_t longest = 0;
    for (const auto& d : docs) longest = std::max(longest, d.token_count());
    bins = {0, longest + 1};
  }
  EvalRunSummary s;
  s.records = evaluate(ck.model, docs, options.max_new_tokens, options.workers);
  s.report = bin_report(s.records, bins, ck.model.config.n_latent);
  s.exact_matches = std::size_t(std::count_if(s.records.begin(), s.records.end(),
                                              [](const EvalRecord& r) { return r.precision == 1.0; }));
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    write_text_file(options.out_dir / "report.json", report_json(s.report, ck.config_hash));
    write_text_file(options.out_dir / "report.csv", report_csv(s.report));
    write_text_file(options.out_dir / "deciles.csv", deciles_csv(s.report.deciles));
    write_text_file(options.out_dir / "records.jsonl", records_jsonl(s.records, ck.config_hash));
  }
  return s;
}

AnalyzeSummary run_analysis(const std::filesystem::path& records_path, const std::filesystem::path& out_dir) {
  const auto records = read_records(records_path);
  AnalyzeSummary s;
  s.records = records.size();
  for (const auto& r : records) s.errors += r.error_positions.size();
  s.profile = positional_error_profile(records);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir / "deciles.csv", deciles_csv(s.profile));
  }
  return s;
}

}  // namespace c3
