#include "experiment.hpp"

#include <fstream>
#include <sstream>

namespace c3 {

Json to_json(const CorpusSpec& s) {
  return Json{{"seed", s.seed},
              {"n_documents", s.n_documents},
              {"min_tokens", s.min_tokens},
              {"max_tokens", s.max_tokens},
              {"mode", mode_name(s.mode)},
              {"injection_rate", s.injection_rate},
              {"shuffle_unit", unit_name(s.shuffle_unit)}};
}

CorpusSpec corpus_spec_from_json(const Json& j, std::string_view where) {
  if (!j.is_object()) fail(ErrorKind::kInvalidArgument, std::string(where) + " must be a JSON object");
  reject_unknown_keys(j, {"seed", "n_documents", "min_tokens", "max_tokens", "mode", "injection_rate", "shuffle_unit"},
                      where);
  CorpusSpec s;
  try {
    s.seed = j.value("seed", s.seed);
    s.n_documents = j.value("n_documents", s.n_documents);
    s.min_tokens = j.value("min_tokens", s.min_tokens);
    s.max_tokens = j.value("max_tokens", s.max_tokens);
    s.injection_rate = j.value("injection_rate", s.injection_rate);
    if (j.contains("mode")) {
      const auto name = j["mode"].get<std::string>();
      const auto mode = parse_mode(name);
      if (!mode) fail(ErrorKind::kInvalidArgument, "invalid mode \"" + name + "\"; valid modes: " + valid_mode_list());
      s.mode = *mode;
    }
    if (j.contains("shuffle_unit")) {
      const auto unit = parse_unit(j["shuffle_unit"].get<std::string>());
      if (!unit) fail(ErrorKind::kInvalidArgument, std::string(where) + ".shuffle_unit must be sentence or word");
      s.shuffle_unit = *unit;
    }
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::kInvalidArgument, std::string(where) + ": wrong value type");
  }
  s.validate();
  return s;
}

Json ExperimentConfig::to_json() const {
  Json corpus = Json::object();
  if (!train_corpus.empty()) corpus["train"] = train_corpus.generic_string();
  if (corpus_spec) corpus["spec"] = c3::to_json(*corpus_spec);
  return Json{{"version", kExperimentVersion},
              {"model", c3::to_json(model)},
              {"train", c3::to_json(train)},
              {"corpus", corpus},
              {"eval", {{"bins", eval_bins}, {"max_new_tokens", eval_max_new_tokens}}},
              {"out_dir", out_dir.generic_string()}};
}

std::vector<Document> ExperimentConfig::load_training_documents() const {
  if (!train_corpus.empty()) {
    if (!std::filesystem::exists(train_corpus)) {
      fail(ErrorKind::kInvalidArgument, "training corpus not found: " + train_corpus.string());
    }
    return read_corpus(train_corpus);
  }
  if (corpus_spec) return generate_corpus(*corpus_spec);
  fail(ErrorKind::kInvalidArgument, "config names no training corpus (corpus.train or corpus.spec)");
}

ExperimentConfig parse_experiment(const Json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) fail(ErrorKind::kInvalidArgument, "experiment config must be a JSON object");
  reject_unknown_keys(j, {"version", "model", "train", "corpus", "eval", "out_dir"}, "config");
  if (!j.contains("version") || !j["version"].is_number_integer() || j["version"].get<int>() != kExperimentVersion) {
    fail(ErrorKind::kInvalidArgument, "config.version must be " + std::to_string(kExperimentVersion));
  }
  ExperimentConfig cfg;
  if (!j.contains("model")) fail(ErrorKind::kInvalidArgument, "config.model is required");
  from_json(j["model"], &cfg.model, "config.model");
  if (j.contains("train")) from_json(j["train"], &cfg.train, "config.train");
  if (j.contains("corpus")) {
    const auto& c = j["corpus"];
    if (!c.is_object()) fail(ErrorKind::kInvalidArgument, "config.corpus must be a JSON object");
    reject_unknown_keys(c, {"train", "spec"}, "config.corpus");
    if (c.contains("train")) {
      if (!c["train"].is_string()) fail(ErrorKind::kInvalidArgument, "config.corpus.train must be a path string");
      std::filesystem::path p = c["train"].get<std::string>();
      cfg.train_corpus = p.is_absolute() ? p : base_dir / p;
    }
    if (c.contains("spec")) cfg.corpus_spec = corpus_spec_from_json(c["spec"], "config.corpus.spec");
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    if (!e.is_object()) fail(ErrorKind::kInvalidArgument, "config.eval must be a JSON object");
    reject_unknown_keys(e, {"bins", "max_new_tokens"}, "config.eval");
    try {
      cfg.eval_bins = e.value("bins", cfg.eval_bins);
      cfg.eval_max_new_tokens = e.value("max_new_tokens", cfg.eval_max_new_tokens);
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::kInvalidArgument, "config.eval: wrong value type");
    }
  }
  if (j.contains("out_dir")) {
    if (!j["out_dir"].is_string()) fail(ErrorKind::kInvalidArgument, "config.out_dir must be a path string");
    std::filesystem::path p = j["out_dir"].get<std::string>();
    cfg.out_dir = p.is_absolute() ? p : base_dir / p;
  }
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kInvalidArgument, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Json j;
  try {
    j = Json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_experiment(j, path.parent_path());
}

}  // namespace c3
