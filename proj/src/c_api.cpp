#include "c3/c3.h"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "checkpoint.hpp"
#include "corpus.hpp"
#include "evaluation.hpp"
#include "pipeline.hpp"

struct c3_model {
  c3::Checkpoint<float> checkpoint;
};

namespace {

thread_local std::string g_last_error;

c3_status to_status(c3::ErrorKind kind) {
  switch (kind) {
    case c3::ErrorKind::kInvalidArgument: return C3_ERR_INVALID_ARGUMENT;
    case c3::ErrorKind::kDimension: return C3_ERR_DIMENSION;
    case c3::ErrorKind::kIo: return C3_ERR_IO;
    case c3::ErrorKind::kFormat: return C3_ERR_FORMAT;
    case c3::ErrorKind::kShapeMismatch: return C3_ERR_SHAPE_MISMATCH;
    case c3::ErrorKind::kTruncated: return C3_ERR_TRUNCATED;
    case c3::ErrorKind::kNumeric: return C3_ERR_NUMERIC;
    case c3::ErrorKind::kInternal: return C3_ERR_INTERNAL;
  }
  return C3_ERR_INTERNAL;
}

template <typename F>
c3_status guarded(F&& body) {
  g_last_error.clear();
  try {
    body();
    return C3_OK;
  } catch (const c3::Error& e) {
    g_last_error = e.what();
    return to_status(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return C3_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return C3_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return C3_ERR_INTERNAL;
  }
}

void require_arg(bool ok, const char* what) {
  if (!ok) c3::fail(c3::ErrorKind::kInvalidArgument, what);
}

c3::TokenSequence tokens_of(const uint8_t* text, size_t len) {
  require_arg(text != nullptr || len == 0, "text pointer is null");
  return c3::encode(std::string_view(reinterpret_cast<const char*>(text), len));
}

}  // namespace

extern "C" {

C3_API const char* c3_version(void) { return "0.1.0"; }

C3_API const char* c3_status_name(c3_status status) {
  switch (status) {
    case C3_OK: return "ok";
    case C3_ERR_INVALID_ARGUMENT: return "invalid argument";
    case C3_ERR_DIMENSION: return "dimension error";
    case C3_ERR_IO: return "i/o error";
    case C3_ERR_FORMAT: return "format error";
    case C3_ERR_SHAPE_MISMATCH: return "shape mismatch";
    case C3_ERR_TRUNCATED: return "truncated file";
    case C3_ERR_NUMERIC: return "numeric error";
    case C3_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

C3_API const char* c3_last_error(void) { return g_last_error.c_str(); }

C3_API void c3_bytes_free(c3_bytes* bytes) {
  if (bytes == nullptr) return;
  std::free(bytes->data);
  bytes->data = nullptr;
  bytes->size = 0;
}

C3_API void c3_corpus_spec_default(c3_corpus_spec* spec) {
  if (spec == nullptr) return;
  const c3::CorpusSpec d;
  spec->seed = d.seed;
  spec->n_documents = d.n_documents;
  spec->min_tokens = d.min_tokens;
  spec->max_tokens = d.max_tokens;
  spec->mode = "prose";
  spec->injection_rate = d.injection_rate;
  spec->shuffle_unit = "sentence";
}

C3_API c3_status c3_corpus_generate(const c3_corpus_spec* spec, const char* out_path, uint64_t* n_written) {
  return guarded([&] {
    require_arg(spec != nullptr && out_path != nullptr, "corpus spec and output path are required");
    c3::CorpusSpec s;
    s.seed = spec->seed;
    s.n_documents = spec->n_documents;
    s.min_tokens = spec->min_tokens;
    s.max_tokens = spec->max_tokens;
    s.injection_rate = spec->injection_rate;
    const auto mode = c3::parse_mode(spec->mode != nullptr ? spec->mode : "");
    if (!mode) {
      c3::fail(c3::ErrorKind::kInvalidArgument, std::string("invalid mode \"") + (spec->mode ? spec->mode : "") +
                                                    "\"; valid modes: " + c3::valid_mode_list());
    }
    s.mode = *mode;
    const auto unit = c3::parse_unit(spec->shuffle_unit != nullptr ? spec->shuffle_unit : "sentence");
    require_arg(unit.has_value(), "invalid shuffle unit; valid units: sentence, word");
    s.shuffle_unit = *unit;
    const auto docs = c3::generate_corpus(s);
    c3::write_corpus(out_path, docs);
    if (n_written != nullptr) *n_written = docs.size();
  });
}

C3_API c3_status c3_model_load(const char* checkpoint_path, c3_model** out) {
  return guarded([&] {
    require_arg(checkpoint_path != nullptr && out != nullptr, "checkpoint path and output handle are required");
    *out = nullptr;
    auto model = std::make_unique<c3_model>();
    model->checkpoint = c3::load_checkpoint<float>(checkpoint_path);
    *out = model.release();
  });
}

C3_API void c3_model_free(c3_model* model) { delete model; }

C3_API c3_status c3_model_get_info(const c3_model* model, c3_model_info* out) {
  return guarded([&] {
    require_arg(model != nullptr && out != nullptr, "model and output are required");
    const auto& m = model->checkpoint.model;
    out->n_latent = m.config.n_latent;
    out->encoder_dim = m.config.encoder.d_model;
    out->decoder_dim = m.config.decoder.d_model;
    out->encoder_params = m.config.encoder.parameter_count();
    out->decoder_params = m.config.decoder.parameter_count();
    out->total_params = m.parameter_count();
    out->max_text_tokens = m.config.max_text_tokens();
    out->step = model->checkpoint.state.step();
  });
}

C3_API c3_status c3_model_encode(const c3_model* model, const uint8_t* text, size_t text_len, float* out,
                                 size_t out_len) {
  return guarded([&] {
    require_arg(model != nullptr && out != nullptr, "model and output buffer are required");
    const auto& m = model->checkpoint.model;
    const size_t need = m.config.n_latent * m.config.encoder.d_model;
    require_arg(out_len >= need, "output buffer smaller than n_latent * encoder_dim");
    const c3::NoGradScope<float> no_grad;
    const auto latent = c3::encode(m, tokens_of(text, text_len));
    std::memcpy(out, latent.data().data(), need * sizeof(float));
  });
}

C3_API c3_status c3_model_repeat(const c3_model* model, const uint8_t* text, size_t text_len,
                                 uint64_t max_new_tokens, c3_bytes* out) {
  return guarded([&] {
    require_arg(model != nullptr && out != nullptr, "model and output are required");
    out->data = nullptr;
    out->size = 0;
    require_arg(text_len > 0, "text must not be empty");
    const auto ids = tokens_of(text, text_len);
    const size_t limit = max_new_tokens > 0 ? size_t(max_new_tokens) : ids.size() + 16;
    const auto gen = c3::reconstruct(model->checkpoint.model, ids, limit);
    const auto bytes = c3::decode(gen.tokens);
    out->data = static_cast<uint8_t*>(std::malloc(bytes.size() + 1));
    if (out->data == nullptr) throw std::bad_alloc();
    std::memcpy(out->data, bytes.data(), bytes.size());
    out->data[bytes.size()] = 0;
    out->size = bytes.size();
  });
}

C3_API c3_status c3_train_run(const c3_train_options* options, c3_train_summary* out) {
  return guarded([&] {
    require_arg(options != nullptr && options->config_path != nullptr, "a config path is required");
    c3::TrainRunOptions o;
    o.config_path = options->config_path;
    if (options->out_dir != nullptr) o.out_dir = options->out_dir;
    if (options->resume_path != nullptr) o.resume = options->resume_path;
    if (options->has_seed) o.seed = options->seed;
    if (options->on_step != nullptr) {
      o.on_step = [cb = options->on_step, user = options->user](const c3::StepRecord& r) {
        cb(r.step, r.lr, r.loss, user);
      };
    }
    const auto s = c3::run_training(o);
    if (out != nullptr) {
      out->start_step = s.start_step;
      out->final_step = s.final_step;
      out->final_loss = s.final_loss;
      out->stopped_on_loss = s.stopped_on_loss ? 1 : 0;
      out->n_documents = s.n_documents;
      std::snprintf(out->config_hash, sizeof out->config_hash, "%s", s.config_hash.c_str());
    }
  });
}

C3_API c3_status c3_eval_run(const c3_eval_options* options, c3_eval_summary* out) {
  return guarded([&] {
    require_arg(options != nullptr && options->checkpoint_path != nullptr, "a checkpoint path is required");
    c3::EvalRunOptions o;
    o.checkpoint = options->checkpoint_path;
    if (options->config_path != nullptr) {
      const auto exp = c3::load_experiment(options->config_path);
      o.corpus = exp.train_corpus;
      o.bins = exp.eval_bins;
      o.max_new_tokens = exp.eval_max_new_tokens;
    }
    if (options->corpus_path != nullptr) o.corpus = options->corpus_path;
    require_arg(!o.corpus.empty(), "a corpus path is required");
    require_arg(options->bin_edges != nullptr || options->n_bin_edges == 0, "bin edge pointer is null");
    if (options->n_bin_edges > 0) {
      o.bins.clear();
      for (size_t i = 0; i < options->n_bin_edges; ++i) o.bins.push_back(size_t(options->bin_edges[i]));
    }
    require_arg(o.bins.empty() || o.bins.size() >= 2, "need at least two bin edges");
    if (options->max_new_tokens > 0) o.max_new_tokens = size_t(options->max_new_tokens);
    o.workers = options->workers == 0 ? 1 : options->workers;
    if (options->out_dir != nullptr) o.out_dir = options->out_dir;
    const auto s = c3::run_evaluation(o);
    if (out != nullptr) {
      out->documents = s.records.size();
      out->exact_matches = s.exact_matches;
      out->mean_precision = s.report.mean_precision.value_or(0.0);
      out->n_bins = s.report.bins.size();
    }
  });
}

C3_API c3_status c3_analyze_run(const char* records_path, const char* out_dir, c3_profile* out) {
  return guarded([&] {
    require_arg(records_path != nullptr, "records path is required");
    const auto s = c3::run_analysis(records_path, out_dir != nullptr ? out_dir : "");
    if (out != nullptr) {
      out->defined = s.profile[0].has_value() ? 1 : 0;
      for (size_t d = 0; d < 10; ++d) out->fraction[d] = s.profile[d].value_or(0.0);
      out->records = s.records;
      out->errors = s.errors;
    }
  });
}

C3_API c3_status c3_precision(const int32_t* reference, size_t reference_len, const int32_t* hypothesis,
                              size_t hypothesis_len, double* out) {
  return guarded([&] {
    require_arg(out != nullptr, "output is required");
    require_arg(reference != nullptr || reference_len == 0, "reference pointer is null");
    require_arg(hypothesis != nullptr || hypothesis_len == 0, "hypothesis pointer is null");
    *out = c3::precision(std::span<const c3::Token>(reference, reference_len),
                         std::span<const c3::Token>(hypothesis, hypothesis_len));
  });
}

C3_API c3_status c3_compression_ratio(uint64_t text_tokens, uint64_t latent_tokens, double* out) {
  return guarded([&] {
    require_arg(out != nullptr, "output is required");
    *out = c3::compression_ratio(size_t(text_tokens), size_t(latent_tokens));
  });
}

C3_API c3_status c3_lr_schedule(int64_t step, double peak_lr, int64_t warmup_steps, int64_t total_steps,
                                double min_lr, double* out) {
  return guarded([&] {
    require_arg(out != nullptr, "output is required");
    c3::TrainConfig cfg;
    cfg.peak_lr = peak_lr;
    cfg.warmup_steps = warmup_steps;
    cfg.total_steps = total_steps;
    cfg.min_lr = min_lr;
    cfg.validate();
    *out = c3::lr_schedule(step, cfg);
  });
}

}  // extern "C"
