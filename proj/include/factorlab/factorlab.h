#ifndef FACTORLAB_H
#define FACTORLAB_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define FLAB_API __declspec(dllexport)
#else
#define FLAB_API __attribute__((visibility("default")))
#endif

typedef enum flab_status {
  FLAB_OK = 0,
  FLAB_INVALID_ARGUMENT = 1,
  FLAB_OUT_OF_RANGE = 2,
  FLAB_ZERO_PROBABILITY_TOKEN = 3,
  FLAB_ENUMERATION_TOO_LARGE = 4,
  FLAB_NON_CLASSICAL_STATE = 5,
  FLAB_DEGENERATE_SPECTRUM = 6,
  FLAB_SHAPE_MISMATCH = 7,
  FLAB_CONFIG = 8,
  FLAB_IO = 9,
  FLAB_TRAINING_DIVERGED = 10,
  FLAB_UNSUPPORTED = 11,
  FLAB_INTERNAL = 12
} flab_status;

typedef struct flab_config flab_config;
typedef struct flab_process flab_process;

/* Strings returned through char** are owned by the caller; release them with
   flab_string_free. flab_last_error is per thread and valid until the next call
   on that thread. */
FLAB_API const char* flab_version(void);
FLAB_API const char* flab_status_name(flab_status s);
FLAB_API const char* flab_last_error(void);
FLAB_API void flab_string_free(char* s);

typedef struct flab_run_options {
  int threads;        /* >= 1 */
  int deterministic;  /* nonzero: wall-clock columns are zeroed */
  int has_seed;       /* nonzero: seed replaces the config's seed list */
  uint64_t seed;
  int steps;          /* > 0 overrides train.steps */
  const char* output_dir; /* NULL or "": config value, else runs/<name> */
  int verbose;        /* progress lines on stderr */
} flab_run_options;

FLAB_API void flab_run_options_init(flab_run_options* opt);

/* Configs */
FLAB_API flab_status flab_preset_names(char** out); /* newline separated */
FLAB_API flab_status flab_config_from_preset(const char* name, flab_config** out);
FLAB_API flab_status flab_config_load(const char* path, flab_config** out);
FLAB_API flab_status flab_config_parse(const char* json, flab_config** out);
FLAB_API flab_status flab_config_to_json(const flab_config* cfg, char** out);
/* Applies the run options and derived fields, then serializes. */
FLAB_API flab_status flab_config_resolve(const flab_config* cfg, const flab_run_options* opt, char** out);
FLAB_API void flab_config_free(flab_config* cfg);

/* Pipeline. Directories come back through out_dir when it is not NULL. */
FLAB_API flab_status flab_generate(const flab_config* cfg, const flab_run_options* opt, int n_seqs, int joint,
                                   char** out_dir);
FLAB_API flab_status flab_train(const flab_config* cfg, const flab_run_options* opt, char** out_dir);
FLAB_API flab_status flab_analyze(const char* run_dir, const flab_run_options* opt);
FLAB_API flab_status flab_run(const flab_config* cfg, const flab_run_options* opt, char** out_dir);
FLAB_API flab_status flab_report(const char* run_dir);
/* JSON array with one object per unit: final loss, k*, R^2, overlaps. */
FLAB_API flab_status flab_summary(const char* run_dir, char** out_json);

/* Acceptance checks. group: oracles | ground-truth-dims | train-smoke | all.
   on_line receives one formatted line per criterion as it finishes. out_json
   holds the machine-readable results; all_pass is 1 when every check passed. */
typedef void (*flab_line_callback)(const char* line, void* user);
typedef struct flab_verify_options {
  int threads;
  int deterministic;
  const char* work_dir; /* training runs for the train-smoke group */
  int steps;            /* > 0 overrides the train-smoke step count */
  const uint64_t* seeds;
  size_t n_seeds;       /* 0: seeds 0, 1, 2 */
  int verbose;
} flab_verify_options;

FLAB_API void flab_verify_options_init(flab_verify_options* opt);
FLAB_API flab_status flab_verify(const char* group, const flab_verify_options* opt, flab_line_callback on_line,
                                 void* user, char** out_json, int* all_pass);

/* Processes */
FLAB_API flab_status flab_process_parse(const char* json, flab_process** out);
FLAB_API flab_status flab_process_from_config(const flab_config* cfg, flab_process** out);
FLAB_API flab_status flab_process_info(const flab_process* p, int* n_tokens, int* n_factors, int* joint_dim,
                                       int* fwh_dim);
FLAB_API flab_status flab_process_sequence_probability(const flab_process* p, const int32_t* tokens, size_t n,
                                                       double* out);
/* out holds n_seqs * (length + (bos ? 1 : 0)) tokens, row-major. */
FLAB_API flab_status flab_process_sample(const flab_process* p, int n_seqs, int length, uint64_t seed, int bos,
                                         int threads, int32_t* out, size_t out_len);
FLAB_API void flab_process_free(flab_process* p);

/* Analysis: k* at fraction p of a centered PCA over rows x cols row-major data. */
FLAB_API flab_status flab_effective_dim(const double* data, size_t rows, size_t cols, double p, int* out);

#ifdef __cplusplus
}
#endif

#endif
