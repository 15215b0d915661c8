#include <fstream>

#include "checkpoint.hpp"
#include "doctest.h"
#include "pipeline.hpp"
#include "test_util.hpp"

using namespace c3;
using namespace c3::testing;

namespace {

Json small_config() {
  return Json::parse(R"({
    "version": 1,
    "model": {"encoder": {"n_layers": 1, "d_model": 16, "n_heads": 2, "d_mlp": 32, "max_seq_len": 48, "lm_head": false},
              "decoder": {"n_layers": 1, "d_model": 16, "n_heads": 2, "d_mlp": 32, "max_seq_len": 64},
              "n_latent": 4},
    "train": {"preset": "desk", "total_steps": 4, "warmup_steps": 1, "batch_per_step": 2, "checkpoint_every": 2},
    "corpus": {"spec": {"seed": 3, "n_documents": 4, "min_tokens": 12, "max_tokens": 24, "mode": "prose"}},
    "eval": {"bins": [12, 18, 24], "max_new_tokens": 30},
    "out_dir": "run"
  })");
}

void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  out << j.dump(2);
}

ErrorKind parse_error(const Json& j) {
  try {
    parse_experiment(j, ".");
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("config parsed unexpectedly");
  return ErrorKind::kInternal;
}

}  // namespace

TEST_CASE("experiment configs parse and resolve paths against their directory") {
  auto j = small_config();
  j["corpus"] = {{"train", "data/c.jsonl"}};
  const auto cfg = parse_experiment(j, "/base");
  CHECK(cfg.model.n_latent == 4);
  CHECK(cfg.model.encoder.d_model == 16);
  CHECK_FALSE(cfg.model.encoder.lm_head);
  CHECK(cfg.train.total_steps == 4);
  CHECK(cfg.train.peak_lr == TrainConfig::desk().peak_lr);
  CHECK(cfg.train_corpus == std::filesystem::path("/base/data/c.jsonl"));
  CHECK(cfg.eval_bins == std::vector<std::size_t>{12, 18, 24});
  CHECK(cfg.eval_max_new_tokens == 30);
  CHECK(cfg.out_dir == std::filesystem::path("/base/run"));
}

TEST_CASE("experiment configs reject unknown keys and bad versions") {
  auto j = small_config();
  j["extra"] = 1;
  CHECK(parse_error(j) == ErrorKind::kInvalidArgument);
  j = small_config();
  j["train"]["learning_rate"] = 0.1;
  CHECK(parse_error(j) == ErrorKind::kInvalidArgument);
  j = small_config();
  j["model"]["decoder"]["dropout"] = 0.1;
  CHECK(parse_error(j) == ErrorKind::kInvalidArgument);
  j = small_config();
  j["version"] = 2;
  CHECK(parse_error(j) == ErrorKind::kInvalidArgument);
  j = small_config();
  j.erase("version");
  CHECK(parse_error(j) == ErrorKind::kInvalidArgument);
  j = small_config();
  j["corpus"]["spec"]["mode"] = "poetry";
  CHECK(parse_error(j) == ErrorKind::kInvalidArgument);
  j = small_config();
  j["model"]["n_latent"] = 0;
  CHECK(parse_error(j) == ErrorKind::kInvalidArgument);
}

TEST_CASE("a config without a corpus cannot load documents") {
  auto j = small_config();
  j.erase("corpus");
  const auto cfg = parse_experiment(j, ".");
  try {
    cfg.load_training_documents();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInvalidArgument);
  }
  j["corpus"] = {{"train", "/nonexistent/c.jsonl"}};
  CHECK_THROWS_AS(parse_experiment(j, ".").load_training_documents(), Error);
}

TEST_CASE("config hashes are stable and sensitive") {
  const auto a = parse_experiment(small_config(), "/x");
  const auto b = parse_experiment(small_config(), "/x");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  auto j = small_config();
  j["train"]["peak_lr"] = 1e-3;
  CHECK(parse_experiment(j, "/x").hash() != a.hash());
  // Canonical form survives a round trip.
  CHECK(parse_experiment(Json::parse(a.to_json().dump()), "/").hash() == a.hash());
}

TEST_CASE("run_training writes a manifest, a loss curve and checkpoints") {
  const auto dir = temp_dir("experiment_train");
  write_json(dir / "cfg.json", small_config());
  TrainRunOptions o;
  o.config_path = dir / "cfg.json";
  std::size_t calls = 0;
  o.on_step = [&](const StepRecord&) { ++calls; };
  const auto s = run_training(o);
  CHECK(s.start_step == 0);
  CHECK(s.final_step == 4);
  CHECK(calls == 4);
  CHECK(s.n_documents == 4);
  CHECK(s.checkpoint == dir / "run" / "checkpoint.c3ck");
  CHECK(std::filesystem::exists(dir / "run" / "run.json"));
  CHECK(std::filesystem::exists(dir / "run" / "loss.csv"));
  const auto ck = load_checkpoint<float>(s.checkpoint);
  CHECK(ck.config_hash == s.config_hash);
  CHECK(ck.state.step() == 4);

  // Resuming a finished run with a longer schedule continues from its step.
  auto longer = small_config();
  longer["train"]["total_steps"] = 6;
  write_json(dir / "longer.json", longer);
  TrainRunOptions r;
  r.config_path = dir / "longer.json";
  r.resume = s.checkpoint;
  r.out_dir = dir / "resumed";
  const auto s2 = run_training(r);
  CHECK(s2.start_step == 4);
  CHECK(s2.final_step == 6);

  // A checkpoint from a different architecture is refused.
  auto other = small_config();
  other["model"]["n_latent"] = 2;
  write_json(dir / "other.json", other);
  r.config_path = dir / "other.json";
  CHECK_THROWS_AS(run_training(r), Error);

  // Seeds override the config and change the initialization.
  TrainRunOptions seeded;
  seeded.config_path = dir / "cfg.json";
  seeded.out_dir = dir / "seeded";
  seeded.seed = 99;
  const auto s3 = run_training(seeded);
  CHECK(file_bytes(s3.checkpoint) != file_bytes(s.checkpoint));
  std::filesystem::remove_all(dir);
}

TEST_CASE("run_evaluation and run_analysis write their reports") {
  const auto dir = temp_dir("experiment_eval");
  write_json(dir / "cfg.json", small_config());
  TrainRunOptions o;
  o.config_path = dir / "cfg.json";
  const auto trained = run_training(o);
  const auto cfg = load_experiment(dir / "cfg.json");
  write_corpus(dir / "eval.jsonl", cfg.load_training_documents());

  EvalRunOptions e;
  e.checkpoint = trained.checkpoint;
  e.corpus = dir / "eval.jsonl";
  e.bins = {12, 18, 24};
  e.max_new_tokens = 8;
  e.out_dir = dir / "eval";
  const auto s = run_evaluation(e);
  CHECK(s.records.size() == 4);
  CHECK(s.report.bins.size() == 2);
  CHECK(s.report.total == 4);
  for (const auto* name : {"report.json", "report.csv", "deciles.csv", "records.jsonl"}) {
    CHECK(std::filesystem::exists(dir / "eval" / name));
  }
  const auto report = Json::parse(std::ifstream(dir / "eval" / "report.json"));
  CHECK(report.at("config_hash") == trained.config_hash);

  const auto a = run_analysis(dir / "eval" / "records.jsonl", dir / "analysis");
  CHECK(a.records == 4);
  CHECK(a.profile == s.report.deciles);
  CHECK(std::filesystem::exists(dir / "analysis" / "deciles.csv"));

  e.corpus = dir / "missing.jsonl";
  CHECK_THROWS_AS(run_evaluation(e), Error);
  e.corpus = dir / "eval.jsonl";
  e.checkpoint = dir / "missing.c3ck";
  CHECK_THROWS_AS(run_evaluation(e), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("the output directory does not enter the config hash") {
  auto j = small_config();
  const auto a = parse_experiment(j, "/x");
  j["out_dir"] = "elsewhere";
  CHECK(parse_experiment(j, "/x").hash() == a.hash());
}
