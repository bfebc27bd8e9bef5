#ifndef ABCSMC_H
#define ABCSMC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum AbcStatus {
  ABC_STATUS_OK = 0,
  ABC_STATUS_NULL_POINTER = 1,
  ABC_STATUS_INVALID_ARGUMENT = 2,
  ABC_STATUS_CONFIG = 3,
  ABC_STATUS_MODEL = 4,
  ABC_STATUS_NO_COMPLETE_ITERATION = 5,
  ABC_STATUS_RUN_FAILED = 6,
  ABC_STATUS_BUFFER_TOO_SMALL = 7,
  ABC_STATUS_PANIC = 8,
} AbcStatus;

// Settings of a single run.
typedef struct AbcConfig AbcConfig;

// A completed run.
typedef struct AbcRun AbcRun;

// An observed target: model plus observed data.
typedef struct AbcTarget AbcTarget;

// One row of the iteration trace.
typedef struct AbcTraceRow {
  size_t t;
  double epsilon;
  double wall_clock_s;
  uint64_t n_simulations;
  double accept_rate;
  size_t unique_after_resample;
  double proposal_fit_s;
} AbcTraceRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *abc_version(void);

// Copies the calling thread's last error message into `buf`.
//
// # Safety
// `buf` must be valid for `len` bytes or null; `needed` must be valid or null.
enum AbcStatus abc_last_error_message(char *buf, size_t len, size_t *needed);

// Creates a shipped model with its built-in observed data
// (`quadratic`, `gm`, `mg1`, `seir`, `slcp`).
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be valid for writes.
enum AbcStatus abc_target_builtin(const char *name, struct AbcTarget **out);

// Parameter dimension of a target; 0 for a null handle.
//
// # Safety
// `t` must be a live handle or null.
size_t abc_target_dim_theta(const struct AbcTarget *t);

// # Safety
// `t` must come from `abc_target_builtin` and not be used afterwards.
void abc_target_free(struct AbcTarget *t);

// Parses a configuration with a `[run]` table and no grid.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be valid for writes.
enum AbcStatus abc_config_from_toml(const char *text, struct AbcConfig **out);

// # Safety
// `c` must come from `abc_config_from_toml` and not be used afterwards.
void abc_config_free(struct AbcConfig *c);

// Runs the configured sampler on `target`. `workers = 0` uses all cores.
//
// # Safety
// Handles must be live; `out` must be valid for writes.
enum AbcStatus abc_run(const struct AbcTarget *target,
                       const struct AbcConfig *config,
                       size_t workers,
                       bool allow_inefficient,
                       struct AbcRun **out);

// # Safety
// `r` must come from `abc_run` and not be used afterwards.
void abc_run_free(struct AbcRun *r);

// Number of completed iterations; 0 for a null handle.
//
// # Safety
// `r` must be a live handle or null.
size_t abc_run_iterations(const struct AbcRun *r);

// # Safety
// `r` must be a live handle; `out` must be valid for writes.
enum AbcStatus abc_run_final_epsilon(const struct AbcRun *r, double *out);

// Rows and columns of the output sample.
//
// # Safety
// `r` must be a live handle; `rows` and `cols` must be valid for writes.
enum AbcStatus abc_run_sample_shape(const struct AbcRun *r, size_t *rows, size_t *cols);

// Copies the output sample row-major into `buf` (`len` doubles).
//
// # Safety
// `r` must be a live handle; `buf` must be valid for `len` doubles.
enum AbcStatus abc_run_copy_sample(const struct AbcRun *r, double *buf, size_t len);

// Trace row `index` (0-based).
//
// # Safety
// `r` must be a live handle; `out` must be valid for writes.
enum AbcStatus abc_run_trace(const struct AbcRun *r, size_t index, struct AbcTraceRow *out);

// The run record as JSON. Call with a null `buf` to learn the size.
//
// # Safety
// `r` must be a live handle; `buf` valid for `len` bytes or null;
// `needed` valid or null.
enum AbcStatus abc_run_record_json(const struct AbcRun *r, char *buf, size_t len, size_t *needed);

// Exact Wasserstein distance of order `order` (1 or 2) between two
// row-major samples of `n` and `m` points in `d` dimensions.
//
// # Safety
// `a` must hold `n * d` doubles, `b` `m * d`; `out` must be valid for writes.
enum AbcStatus abc_wasserstein(const double *a,
                               size_t n,
                               const double *b,
                               size_t m,
                               size_t d,
                               uint32_t order,
                               double *out);

// Systematic resampling of `n_weights` weights into `n` sorted indices.
//
// # Safety
// `weights` must hold `n_weights` doubles; `out` must hold `n` entries.
enum AbcStatus abc_systematic_resample(const double *weights,
                                       size_t n_weights,
                                       size_t n,
                                       double u,
                                       size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ABCSMC_H */
