#ifndef GAPMM_GAPMM_H
#define GAPMM_GAPMM_H

/* C interface of libgapmm. Every function that can fail returns a status;
 * the message of the last failure on the calling thread is available from
 * gapmm_last_error(). Handles are opaque and freed with their _free call;
 * passing NULL to a _free call is a no-op. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define GAPMM_API __attribute__((visibility("default")))
#else
#define GAPMM_API
#endif

typedef enum gapmm_status {
  GAPMM_OK = 0,
  GAPMM_ERR_INVALID_ARGUMENT = 1,
  GAPMM_ERR_DIMENSION_MISMATCH = 2,
  GAPMM_ERR_UNSUPPORTED = 3,
  GAPMM_ERR_PARSE = 4,
  GAPMM_ERR_IO = 5,
  GAPMM_ERR_NOT_CONVERGED = 6,
  GAPMM_ERR_INVARIANT_VIOLATION = 7,
  GAPMM_ERR_PROJECTION_SINGULAR = 8,
  GAPMM_ERR_SCHEMA_MISMATCH = 9,
  GAPMM_ERR_INTERNAL = 10
} gapmm_status;

GAPMM_API const char* gapmm_version(void);
GAPMM_API const char* gapmm_status_string(gapmm_status status);
/* Empty string when the last call on this thread succeeded. */
GAPMM_API const char* gapmm_last_error(void);

/* 0 restores the default (hardware concurrency). */
GAPMM_API gapmm_status gapmm_set_threads(int threads);
GAPMM_API int gapmm_threads(void);

/* ---- traces ---------------------------------------------------------------- */

typedef struct gapmm_trace gapmm_trace;

/* Unrecorded values are NaN. */
typedef struct gapmm_trace_row {
  int t;
  double upper;
  double lower;
  double c_t;
  double gap;
  double grad_norm;
  long passes;
  double step_norm;
  uint32_t flags;
} gapmm_trace_row;

typedef struct gapmm_run_summary {
  /* Robust fitting: final robust cost. Training: full-dataset upper bound. */
  double final_value;
  /* Training only: full-dataset lower bound and accuracy; NaN otherwise. */
  double final_lower;
  double accuracy;
  int64_t iterations;
  int64_t total_passes;
  int64_t epochs;
  int64_t skipped_steps;
} gapmm_run_summary;

GAPMM_API int64_t gapmm_trace_length(const gapmm_trace* trace);
GAPMM_API gapmm_status gapmm_trace_row_at(const gapmm_trace* trace, int64_t index,
                                          gapmm_trace_row* row);
GAPMM_API gapmm_status gapmm_trace_summary(const gapmm_trace* trace, gapmm_run_summary* summary);
/* Driver or strategy name; valid while the handle lives. */
GAPMM_API const char* gapmm_trace_driver(const gapmm_trace* trace);
GAPMM_API const char* gapmm_trace_status(const gapmm_trace* trace);
GAPMM_API gapmm_status gapmm_trace_save_csv(const gapmm_trace* trace, const char* path);
/* Per-epoch full-dataset evaluations; header only when none were taken. */
GAPMM_API gapmm_status gapmm_trace_save_epochs_csv(const gapmm_trace* trace, const char* path);
GAPMM_API void gapmm_trace_free(gapmm_trace* trace);

/* Merges per-iteration CSVs into one "instance,strategy,t,metric,value" CSV.
 * Labels come from file names of the form <instance>__<strategy>.csv. */
GAPMM_API gapmm_status gapmm_trace_export(const char* const* paths, size_t count,
                                          const char* out_path, int64_t* rows_written);

/* ---- robust fitting -------------------------------------------------------- */

typedef struct gapmm_ba_problem gapmm_ba_problem;

GAPMM_API gapmm_status gapmm_ba_load(const char* path, gapmm_ba_problem** out);
/* spec: "c=8,p=200,obs=0.5,out=0.3,seed=1" with optional noise, spread, tau,
 * rot, trans, pt keys. The kernel is the smooth truncated quadratic at the
 * spec's tau. */
GAPMM_API gapmm_status gapmm_ba_synthetic(const char* spec, gapmm_ba_problem** out);
/* kernel: "stq", "welsch" or "quadratic". */
GAPMM_API gapmm_status gapmm_ba_set_kernel(gapmm_ba_problem* problem, const char* kernel,
                                           double tau);
GAPMM_API gapmm_status gapmm_ba_counts(const gapmm_ba_problem* problem, int64_t* cameras,
                                       int64_t* points, int64_t* observations);
GAPMM_API gapmm_status gapmm_ba_tau(const gapmm_ba_problem* problem, double* tau);
/* Robust cost at the stored estimate. */
GAPMM_API gapmm_status gapmm_ba_cost(const gapmm_ba_problem* problem, double* cost);
GAPMM_API void gapmm_ba_free(gapmm_ba_problem* problem);

typedef struct gapmm_robust_options {
  int rounds;
  double eta;
  double eta_prime;
  /* LM linearizations per round. */
  int inner_iterations;
} gapmm_robust_options;

GAPMM_API void gapmm_robust_options_default(gapmm_robust_options* options);

/* strategy: "irls", "joint-hq", "graduated" or "regemm". */
GAPMM_API gapmm_status gapmm_robust_fit(const gapmm_ba_problem* problem, const char* strategy,
                                        const gapmm_robust_options* options, gapmm_trace** out);

typedef struct gapmm_benchmark gapmm_benchmark;

typedef struct gapmm_benchmark_row {
  const char* instance;
  const char* strategy;
  double final_cost;
  int rounds;
  double wall_ms;
  /* NULL on success. */
  const char* error;
} gapmm_benchmark_row;

/* Runs every strategy of the comma-separated list ("all" for the four) on
 * the problem. With a non-NULL out_dir writes <instance>__<strategy>.csv per
 * run and summary.csv. A failing run is recorded in its row. */
GAPMM_API gapmm_status gapmm_robust_benchmark(const gapmm_ba_problem* problem,
                                              const char* instance, const char* strategies,
                                              const gapmm_robust_options* options,
                                              const char* out_dir, gapmm_benchmark** out);
GAPMM_API int64_t gapmm_benchmark_length(const gapmm_benchmark* benchmark);
/* String fields stay valid while the handle lives. */
GAPMM_API gapmm_status gapmm_benchmark_row_at(const gapmm_benchmark* benchmark, int64_t index,
                                              gapmm_benchmark_row* row);
GAPMM_API void gapmm_benchmark_free(gapmm_benchmark* benchmark);

/* ---- energy-model training -------------------------------------------------- */

typedef struct gapmm_dataset gapmm_dataset;

/* Gaussian cluster pairs per class, one-hot targets. */
GAPMM_API gapmm_status gapmm_dataset_synthetic(int samples, int input_dim, int classes,
                                               double noise, uint64_t seed,
                                               gapmm_dataset** out);
/* Unsigned-byte IDX images and labels; limit 0 keeps everything. */
GAPMM_API gapmm_status gapmm_dataset_idx(const char* images_path, const char* labels_path,
                                         int classes, int64_t limit, gapmm_dataset** out);
GAPMM_API gapmm_status gapmm_dataset_shape(const gapmm_dataset* dataset, int64_t* samples,
                                           int64_t* input_dim, int64_t* output_dim);
GAPMM_API void gapmm_dataset_free(gapmm_dataset* dataset);

typedef struct gapmm_chl_options {
  /* Layer sizes, e.g. "8-6-6-4". */
  const char* architecture;
  /* "sudemm", "stochastic-sudemm", "fixed:<passes>" or "regemm". sudemm is
   * the full-batch driver when batch is 0 and the per-batch gap rule
   * otherwise; regemm is always full-batch. */
  const char* driver;
  double rho;
  double eta;
  /* Step size on the per-sample mean gradient. */
  double learning_rate;
  /* Mini-batch size of the stochastic drivers; 0 uses the whole dataset. */
  int batch;
  int epochs;
  int max_passes;
  /* Cold passes per sample for full-dataset evaluations. */
  int eval_passes;
  uint64_t seed;
} gapmm_chl_options;

GAPMM_API void gapmm_chl_options_default(gapmm_chl_options* options);

GAPMM_API gapmm_status gapmm_chl_train(const gapmm_dataset* dataset,
                                       const gapmm_chl_options* options, gapmm_trace** out);

#ifdef __cplusplus
}
#endif

#endif
