#ifndef C3_C3_H_
#define C3_C3_H_

/*
 * C interface to the context cascade compression library.
 *
 * Every fallible call returns a c3_status. On failure a human-readable message
 * is available from c3_last_error() until the next call on the same thread.
 * Objects behind opaque handles are released with their matching _free call.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(C3_BUILDING_LIBRARY)
#define C3_API __declspec(dllexport)
#else
#define C3_API __declspec(dllimport)
#endif
#else
#define C3_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum c3_status {
  C3_OK = 0,
  C3_ERR_INVALID_ARGUMENT = 1, /* bad flags, config or spec */
  C3_ERR_DIMENSION = 2,
  C3_ERR_IO = 3,
  C3_ERR_FORMAT = 4,         /* malformed checkpoint, corpus or records file */
  C3_ERR_SHAPE_MISMATCH = 5, /* checkpoint tensors disagree with its config */
  C3_ERR_TRUNCATED = 6,
  C3_ERR_NUMERIC = 7, /* non-finite loss or gradient */
  C3_ERR_INTERNAL = 8
} c3_status;

C3_API const char* c3_version(void);
C3_API const char* c3_status_name(c3_status status);
C3_API const char* c3_last_error(void);

/* Library-owned byte buffer. */
typedef struct c3_bytes {
  uint8_t* data;
  size_t size;
} c3_bytes;

C3_API void c3_bytes_free(c3_bytes* bytes);

/* ---- corpus ------------------------------------------------------------ */

typedef struct c3_corpus_spec {
  uint64_t seed;
  uint64_t n_documents;
  uint64_t min_tokens;
  uint64_t max_tokens;
  const char* mode; /* prose | second_language | random_chars | shuffled | mixed */
  double injection_rate;
  const char* shuffle_unit; /* sentence | word */
} c3_corpus_spec;

C3_API void c3_corpus_spec_default(c3_corpus_spec* spec);
/* Writes JSON lines {id, mode, text}. */
C3_API c3_status c3_corpus_generate(const c3_corpus_spec* spec, const char* out_path, uint64_t* n_written);

/* ---- model ------------------------------------------------------------- */

typedef struct c3_model c3_model;

typedef struct c3_model_info {
  uint64_t n_latent;
  uint64_t encoder_dim;
  uint64_t decoder_dim;
  uint64_t encoder_params;
  uint64_t decoder_params;
  uint64_t total_params;
  uint64_t max_text_tokens;
  int64_t step;
} c3_model_info;

C3_API c3_status c3_model_load(const char* checkpoint_path, c3_model** out);
C3_API void c3_model_free(c3_model* model);
C3_API c3_status c3_model_get_info(const c3_model* model, c3_model_info* out);

/* Latent context for a byte string, row-major n_latent x encoder_dim floats.
 * out_len must be at least n_latent * encoder_dim. */
C3_API c3_status c3_model_encode(const c3_model* model, const uint8_t* text, size_t text_len, float* out,
                                 size_t out_len);

/* Compresses and greedily reconstructs text. max_new_tokens == 0 selects
 * text_len + 16. */
C3_API c3_status c3_model_repeat(const c3_model* model, const uint8_t* text, size_t text_len,
                                 uint64_t max_new_tokens, c3_bytes* out);

/* ---- experiments ------------------------------------------------------- */

typedef void (*c3_step_callback)(int64_t step, double lr, double loss, void* user);

typedef struct c3_train_options {
  const char* config_path;
  const char* out_dir;     /* NULL: config.out_dir */
  const char* resume_path; /* NULL: fresh run */
  int has_seed;
  uint64_t seed;
  c3_step_callback on_step; /* may be NULL */
  void* user;
} c3_train_options;

typedef struct c3_train_summary {
  int64_t start_step;
  int64_t final_step;
  double final_loss;
  int stopped_on_loss;
  uint64_t n_documents;
  char config_hash[17];
} c3_train_summary;

/* Writes checkpoint.c3ck, loss.csv and run.json into the output directory. */
C3_API c3_status c3_train_run(const c3_train_options* options, c3_train_summary* out);

typedef struct c3_eval_options {
  const char* checkpoint_path;
  const char* corpus_path; /* NULL: the config's training corpus */
  const char* config_path; /* may be NULL; supplies default bins and max_new_tokens */
  const uint64_t* bin_edges; /* may be NULL */
  size_t n_bin_edges;
  uint64_t max_new_tokens; /* 0: reference length + 16 */
  uint32_t workers;
  const char* out_dir; /* NULL: no files */
} c3_eval_options;

typedef struct c3_eval_summary {
  uint64_t documents;
  uint64_t exact_matches;
  double mean_precision;
  uint64_t n_bins;
} c3_eval_summary;

/* Writes report.json, report.csv, deciles.csv and records.jsonl. */
C3_API c3_status c3_eval_run(const c3_eval_options* options, c3_eval_summary* out);

typedef struct c3_profile {
  double fraction[10]; /* meaningful only when defined != 0 */
  int defined;
  uint64_t records;
  uint64_t errors;
} c3_profile;

/* Reads records.jsonl, writes deciles.csv into out_dir (NULL: no file). */
C3_API c3_status c3_analyze_run(const char* records_path, const char* out_dir, c3_profile* out);

/* ---- metrics ----------------------------------------------------------- */

C3_API c3_status c3_precision(const int32_t* reference, size_t reference_len, const int32_t* hypothesis,
                              size_t hypothesis_len, double* out);
C3_API c3_status c3_compression_ratio(uint64_t text_tokens, uint64_t latent_tokens, double* out);
C3_API c3_status c3_lr_schedule(int64_t step, double peak_lr, int64_t warmup_steps, int64_t total_steps,
                                double min_lr, double* out);

#ifdef __cplusplus
}
#endif

#endif /* C3_C3_H_ */
