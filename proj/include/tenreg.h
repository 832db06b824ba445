/* C interface to the tensor regression library.
 *
 * Every object is an opaque handle created by a tenreg_* call and released
 * with the matching *_free (all of which accept NULL). Functions return
 * tenreg_status; on failure tenreg_last_error() gives a message for the
 * calling thread. Const char* results point into the handle they came from
 * and stay valid until it is freed.
 *
 * All tensors are dense doubles in generalized column-major order: entry
 * (i1,...,iK) of a dims (m1,...,mK) tensor sits at flat offset
 * i1 + i2*m1 + i3*m1*m2 + ... Regression data comes as a predictor/response
 * pair (plus optional 0/1 response mask) whose trailing mode indexes
 * replicates.
 */
#ifndef TENREG_H
#define TENREG_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TENREG_API __declspec(dllexport)
#else
#define TENREG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tenreg_status {
  TENREG_OK = 0,
  TENREG_ERR_INVALID = 1, /* bad shapes or option values */
  TENREG_ERR_IO = 2,      /* missing or unwritable files */
  TENREG_ERR_PARSE = 3,   /* malformed input */
  TENREG_ERR_NUMERIC = 4, /* singular systems, divergence */
  TENREG_ERR_SAMPLER = 5  /* Monte Carlo failure */
} tenreg_status;

TENREG_API const char* tenreg_version(void);

/* Message for the most recent failure on this thread; empty, never NULL. */
TENREG_API const char* tenreg_last_error(void);

/* ---- tensors ---------------------------------------------------------- */

typedef struct tenreg_tensor tenreg_tensor;

/* data may be NULL for a zero-filled tensor, otherwise it supplies all
 * prod(dims) entries in linearization order. */
TENREG_API tenreg_status tenreg_tensor_create(const int64_t* dims, int order,
                                              const double* data,
                                              tenreg_tensor** out);
TENREG_API tenreg_status tenreg_tensor_read(const char* path,
                                            tenreg_tensor** out);
TENREG_API tenreg_status tenreg_tensor_write(const tenreg_tensor* t,
                                             const char* path);
TENREG_API int tenreg_tensor_order(const tenreg_tensor* t);
TENREG_API int64_t tenreg_tensor_dim(const tenreg_tensor* t, int mode);
TENREG_API int64_t tenreg_tensor_size(const tenreg_tensor* t);
TENREG_API const double* tenreg_tensor_data(const tenreg_tensor* t);
TENREG_API void tenreg_tensor_free(tenreg_tensor* t);

/* ---- factor sets and covariances -------------------------------------- */

typedef struct tenreg_factors tenreg_factors;
typedef struct tenreg_covariance tenreg_covariance;

TENREG_API tenreg_status tenreg_factors_read(const char* path,
                                             tenreg_factors** out);
TENREG_API tenreg_status tenreg_factors_write(const tenreg_factors* f,
                                              const char* path);
TENREG_API int tenreg_factors_order(const tenreg_factors* f);
TENREG_API int64_t tenreg_factors_rows(const tenreg_factors* f, int mode);
TENREG_API int64_t tenreg_factors_cols(const tenreg_factors* f, int mode);
TENREG_API int tenreg_factors_is_identity(const tenreg_factors* f, int mode);
TENREG_API tenreg_status tenreg_factors_entry(const tenreg_factors* f,
                                              int mode, int64_t row,
                                              int64_t col, double* out);
TENREG_API void tenreg_factors_free(tenreg_factors* f);

/* Applies the multilinear map to x. A trailing fixed-identity factor is
 * retargeted to x's replicate count, so a fitted model predicts for any
 * number of new replicates. */
TENREG_API tenreg_status tenreg_predict(const tenreg_factors* f,
                                        const tenreg_tensor* x,
                                        tenreg_tensor** yhat);

/* y - yhat, with masked response cells set to zero. mask may be NULL. */
TENREG_API tenreg_status tenreg_residual(const tenreg_factors* f,
                                         const tenreg_tensor* x,
                                         const tenreg_tensor* y,
                                         const tenreg_tensor* mask,
                                         tenreg_tensor** out);

TENREG_API tenreg_status tenreg_covariance_read(const char* path,
                                                tenreg_covariance** out);
TENREG_API tenreg_status tenreg_covariance_write(const tenreg_covariance* c,
                                                 const char* path);
TENREG_API int tenreg_covariance_order(const tenreg_covariance* c);
TENREG_API int64_t tenreg_covariance_dim(const tenreg_covariance* c, int mode);
TENREG_API int tenreg_covariance_is_identity(const tenreg_covariance* c,
                                             int mode);
TENREG_API tenreg_status tenreg_covariance_entry(const tenreg_covariance* c,
                                                 int mode, int64_t row,
                                                 int64_t col, double* out);
TENREG_API double tenreg_covariance_tau2(const tenreg_covariance* c);
TENREG_API void tenreg_covariance_free(tenreg_covariance* c);

/* ---- least squares and maximum likelihood fits ------------------------ */

typedef struct tenreg_fit_result tenreg_fit_result;

typedef struct tenreg_fit_options {
  double tol;        /* relative objective change declaring convergence */
  int max_sweeps;
  uint64_t seed;
  double ridge;      /* Gram ridge scaled by trace/dim; 0 disables */
  int identity_init; /* nonzero starts factors at rectangular identities */
} tenreg_fit_options;
TENREG_API void tenreg_fit_options_default(tenreg_fit_options* opts);

/* Alternating least squares. mask may be NULL. */
TENREG_API tenreg_status tenreg_fit_als(const tenreg_tensor* x,
                                        const tenreg_tensor* y,
                                        const tenreg_tensor* mask,
                                        const tenreg_fit_options* opts,
                                        tenreg_fit_result** out);

/* Alternating generalized least squares with per-mode error covariances;
 * the result additionally carries a covariance set. */
TENREG_API tenreg_status tenreg_fit_gls(const tenreg_tensor* x,
                                        const tenreg_tensor* y,
                                        const tenreg_tensor* mask,
                                        const tenreg_fit_options* opts,
                                        tenreg_fit_result** out);

TENREG_API tenreg_status tenreg_fit_result_factors(const tenreg_fit_result* r,
                                                   tenreg_factors** out);
/* TENREG_ERR_INVALID for least squares results, which have none. */
TENREG_API tenreg_status tenreg_fit_result_covariance(
    const tenreg_fit_result* r, tenreg_covariance** out);
/* Objective per sweep: residual sum of squares for least squares, negative
 * log-likelihood for the generalized fit. */
TENREG_API int64_t tenreg_fit_result_trace_len(const tenreg_fit_result* r);
TENREG_API const double* tenreg_fit_result_trace(const tenreg_fit_result* r);
TENREG_API int tenreg_fit_result_sweeps(const tenreg_fit_result* r);
TENREG_API int tenreg_fit_result_converged(const tenreg_fit_result* r);
TENREG_API void tenreg_fit_result_free(tenreg_fit_result* r);

/* ---- posterior sampling ------------------------------------------------ */

typedef struct tenreg_summary tenreg_summary;

typedef struct tenreg_gibbs_options {
  int iterations; /* total sweeps, burn-in included */
  int burnin;
  int chains;
  int thin;
  uint64_t seed;
  int warm_start;        /* chain 0 starts at the least squares fit */
  int threads;           /* 0 resolves via TENREG_THREADS, then hardware */
  const char* store_dir; /* NULL keeps draws in memory only */
  double eta0;           /* inverse-gamma prior on the noise scale */
  double tau02;
} tenreg_gibbs_options;
TENREG_API void tenreg_gibbs_options_default(tenreg_gibbs_options* opts);

/* Runs the sampler and summarizes the pooled draws. With store_dir set,
 * every post-burn-in state is appended to per-chain files as it appears,
 * so partial chains survive a failure. */
TENREG_API tenreg_status tenreg_gibbs(const tenreg_tensor* x,
                                      const tenreg_tensor* y,
                                      const tenreg_tensor* mask,
                                      const tenreg_gibbs_options* opts,
                                      tenreg_summary** out);

/* Summarizes a chain store written by an earlier run. */
TENREG_API tenreg_status tenreg_load_chain_summary(const char* dir,
                                                   tenreg_summary** out);

typedef struct tenreg_summary_entry {
  int mode;          /* 1-based free mode */
  int64_t row, col;  /* 1-based */
  double mean, sd;
  double q01, q025, q975, q99;
  int flag;          /* +-2 one-sided 99% rule, +-1 two-sided 95%, else 0 */
  double chain_sd;   /* spread of per-chain means */
} tenreg_summary_entry;

TENREG_API int64_t tenreg_summary_size(const tenreg_summary* s);
TENREG_API tenreg_status tenreg_summary_entry_at(const tenreg_summary* s,
                                                 int64_t i,
                                                 tenreg_summary_entry* out);
TENREG_API double tenreg_summary_max_chain_sd(const tenreg_summary* s);
TENREG_API tenreg_status tenreg_summary_write_csv(const tenreg_summary* s,
                                                  const char* path);
TENREG_API void tenreg_summary_free(tenreg_summary* s);

/* ---- event ingestion and predictor construction ----------------------- */

typedef struct tenreg_panel tenreg_panel;

/* Reads source,target,type,period,count CSV (header required, any column
 * order) into an m x m x J x T count panel. Label orders default to
 * lexicographic (periods numeric when integral); pass arrays to fix them
 * explicitly, which may include labels absent from the file. */
TENREG_API tenreg_status tenreg_ingest_events(
    const char* csv_path, int include_diagonal,
    const char* const* node_order, size_t num_nodes,
    const char* const* type_order, size_t num_types,
    const char* const* period_order, size_t num_periods, tenreg_panel** out);

/* dims out: m, m, J, T. */
TENREG_API tenreg_status tenreg_panel_dims(const tenreg_panel* p,
                                           int64_t dims[4]);
TENREG_API const char* tenreg_panel_node(const tenreg_panel* p, int64_t i);
TENREG_API const char* tenreg_panel_type(const tenreg_panel* p, int64_t i);
TENREG_API const char* tenreg_panel_period(const tenreg_panel* p, int64_t i);
TENREG_API int tenreg_panel_diagonal_defined(const tenreg_panel* p);
TENREG_API tenreg_status tenreg_panel_counts(const tenreg_panel* p,
                                             tenreg_tensor** out);
TENREG_API void tenreg_panel_free(tenreg_panel* p);

typedef enum tenreg_demean_stage {
  TENREG_DEMEAN_AFTER = 0, /* relative to the normal-score transform */
  TENREG_DEMEAN_BEFORE = 1,
  TENREG_DEMEAN_NONE = 2
} tenreg_demean_stage;

typedef struct tenreg_predictor_spec {
  int lag1;
  int reciprocal;
  int transitivity;
  int monthly;
  int monthly_window;
  int quantile; /* normal-score transform of each dyad series */
  tenreg_demean_stage demean;
} tenreg_predictor_spec;
TENREG_API void tenreg_predictor_spec_default(tenreg_predictor_spec* spec);

/* Builds the lagged predictor/response pair from a count panel. mask_out
 * may be NULL to discard the mask; *mask_out is NULL when the panel's
 * diagonal is defined and nothing needs masking. */
TENREG_API tenreg_status tenreg_build_dataset(const tenreg_panel* p,
                                              const tenreg_predictor_spec* spec,
                                              tenreg_tensor** x_out,
                                              tenreg_tensor** y_out,
                                              tenreg_tensor** mask_out);

/* ---- cross validation -------------------------------------------------- */

typedef struct tenreg_scores tenreg_scores;

typedef struct tenreg_cv_options {
  int folds;
  int64_t test_size; /* replicates per test fold */
  uint64_t seed;
  int demean_full;   /* nonzero centers with all-data means, not train means */
  int in_sample;     /* add fold -1 rows fitted and scored on everything */
  int threads;
} tenreg_cv_options;
TENREG_API void tenreg_cv_options_default(tenreg_cv_options* opts);

/* Scores the named built-in models (multiplicative, additive, dyad,
 * separate, zero) on random test folds. */
TENREG_API tenreg_status tenreg_cross_validate(
    const tenreg_tensor* x, const tenreg_tensor* y, const tenreg_tensor* mask,
    const char* const* model_names, size_t num_models,
    const tenreg_cv_options* opts, tenreg_scores** out);

TENREG_API int64_t tenreg_scores_num_rows(const tenreg_scores* s);
TENREG_API tenreg_status tenreg_scores_row(const tenreg_scores* s, int64_t i,
                                           const char** model, int* fold,
                                           const char** type, double* r2,
                                           int* failed);
TENREG_API int64_t tenreg_scores_num_summaries(const tenreg_scores* s);
TENREG_API tenreg_status tenreg_scores_summary(const tenreg_scores* s,
                                               int64_t i, const char** model,
                                               const char** type, double* mean,
                                               double* min, double* max,
                                               int* folds_used);
TENREG_API tenreg_status tenreg_scores_write_csv(const tenreg_scores* s,
                                                 const char* path);
TENREG_API void tenreg_scores_free(tenreg_scores* s);

/* ---- residual diagnostics ---------------------------------------------- */

typedef struct tenreg_diag tenreg_diag;

/* Correlation of the rows of the mode-k unfolding of a residual tensor,
 * with its eigendecomposition (descending). */
TENREG_API tenreg_status tenreg_mode_correlation(const tenreg_tensor* residual,
                                                 int mode, tenreg_diag** out);
TENREG_API int64_t tenreg_diag_dim(const tenreg_diag* d);
TENREG_API tenreg_status tenreg_diag_correlation(const tenreg_diag* d,
                                                 int64_t row, int64_t col,
                                                 double* out);
TENREG_API tenreg_status tenreg_diag_eigenvalue(const tenreg_diag* d,
                                                int64_t i, double* out);
TENREG_API tenreg_status tenreg_diag_write_csv(const tenreg_diag* d,
                                               const char* correlation_path,
                                               const char* eigen_path);
TENREG_API void tenreg_diag_free(tenreg_diag* d);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* TENREG_H */
