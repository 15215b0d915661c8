#pragma once

// End-to-end commands shared by the C API and, through it, the CLI.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "evaluation.hpp"
#include "experiment.hpp"

namespace c3 {

struct TrainRunOptions {
  std::filesystem::path config_path;
  std::optional<std::filesystem::path> out_dir;  // overrides config.out_dir
  std::optional<std::filesystem::path> resume;
  std::optional<std::uint64_t> seed;  // overrides train.seed (also the init seed)
  std::function<void(const StepRecord&)> on_step;
};

struct TrainRunSummary {
  std::int64_t start_step = 0;
  std::int64_t final_step = 0;
  double final_loss = 0;
  bool stopped_on_loss = false;
  std::size_t n_documents = 0;
  std::filesystem::path checkpoint;
  std::string config_hash;
};

TrainRunSummary run_training(const TrainRunOptions& options);

struct EvalRunOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path corpus;
  std::vector<std::size_t> bins;  // empty: {0, max length + 1}
  std::size_t max_new_tokens = 0;
  std::size_t workers = 1;
  std::filesystem::path out_dir;  // empty: no files
};

struct EvalRunSummary {
  EvalReport report;
  std::vector<EvalRecord> records;
  std::size_t exact_matches = 0;
};

// Writes report.json, report.csv, deciles.csv and records.jsonl.
EvalRunSummary run_evaluation(const EvalRunOptions& options);

struct AnalyzeSummary {
  DecileProfile profile;
  std::size_t records = 0;
  std::size_t errors = 0;
};

// Writes deciles.csv when out_dir is set.
AnalyzeSummary run_analysis(const std::filesystem::path& records_path, const std::filesystem::path& out_dir);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace c3
