#pragma once

// File-based run configuration. JSON, versioned, unknown keys rejected:
//
// {
//   "version": 1,
//   "model":  {"encoder": {...}, "decoder": {...}, "n_latent": 8},
//   "train":  {"preset": "desk", ...overrides},
//   "corpus": {"train": "corpus.jsonl"}  or  {"spec": {...corpus spec...}},
//   "eval":   {"bins": [64, 96, 128], "max_new_tokens": 0},
//   "out_dir": "runs/overfit"
// }

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cascade.hpp"
#include "config_io.hpp"
#include "corpus.hpp"
#include "training.hpp"

namespace c3 {

inline constexpr int kExperimentVersion = 1;

struct ExperimentConfig {
  CascadeConfig model;
  TrainConfig train = TrainConfig::desk();
  std::filesystem::path train_corpus;     // resolved against the config file's directory
  std::optional<CorpusSpec> corpus_spec;  // generated in memory when no path is given
  std::vector<std::size_t> eval_bins;
  std::size_t eval_max_new_tokens = 0;
  std::filesystem::path out_dir;

  std::vector<Document> load_training_documents() const;
  Json to_json() const;
  // Identifies the experiment independently of where its outputs go.
  std::string hash() const {
    auto j = to_json();
    j.erase("out_dir");
    return json_hash(j);
  }
};

Json to_json(const CorpusSpec& spec);
CorpusSpec corpus_spec_from_json(const Json& j, std::string_view where);

ExperimentConfig parse_experiment(const Json& j, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment(const std::filesystem::path& path);

}  // namespace c3
