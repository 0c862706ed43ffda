#ifndef GEOASSESS_H
#define GEOASSESS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum GaStatus {
  GA_STATUS_OK = 0,
  GA_STATUS_INVALID_ARGUMENT = 1,
  GA_STATUS_DOMAIN = 2,
  GA_STATUS_DIMENSION_MISMATCH = 3,
  GA_STATUS_NOT_POSITIVE_DEFINITE = 4,
  GA_STATUS_RANK_OVERFLOW = 5,
  GA_STATUS_RANK_DEFICIENT = 6,
  GA_STATUS_FIT_FAILURE = 7,
  GA_STATUS_PARSE = 8,
  GA_STATUS_IO = 9,
  GA_STATUS_NULL_POINTER = 10,
  GA_STATUS_PANIC = 11,
} GaStatus;

// Likelihood backend for `ga_fit`.
typedef enum GaBackend {
  GA_BACKEND_EXACT = 0,
  GA_BACKEND_TLR = 1,
} GaBackend;

// Criteria estimator for `ga_assess`.
typedef enum GaMethod {
  GA_METHOD_PLUGIN = 0,
  GA_METHOD_STEIN = 1,
} GaMethod;

// Observed locations and values.
typedef struct GaDataset GaDataset;

// Per-location criteria from `ga_assess`.
typedef struct GaReport GaReport;

// Matérn parameters: partial sill, range, smoothness and nugget.
typedef struct GaMaternSpec {
  double sigma2;
  double alpha;
  double nu;
  double nugget;
} GaMaternSpec;

// Fit settings. `tlr_*` fields are read only for `GA_BACKEND_TLR`.
typedef struct GaFitOptions {
  enum GaBackend backend;
  size_t nb;
  size_t tlr_max_rank;
  double tlr_acc;
  double opt_tol;
  size_t max_iter;
  // Nonzero holds ν at its initial value.
  int32_t fix_nu;
  // Nonzero holds the nugget at its initial value.
  int32_t fix_nugget;
} GaFitOptions;

typedef struct GaFitResult {
  struct GaMaternSpec theta_hat;
  double loglik;
  size_t evaluations;
  // Nonzero when the tolerance was met before `max_iter`.
  int32_t converged;
} GaFitResult;

typedef struct GaSummary {
  double mloe;
  double mmom;
  double rmom;
  size_t clamp_count;
} GaSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the message of the last failure on this thread into `buf`
// (NUL-terminated, truncated to `len`). Returns the full message length
// excluding the terminator, or 0 when there is none.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t ga_last_error_message(char *buf, size_t len);

// Matérn covariance at distance `h`.
//
// # Safety
// `s` and `out` must be valid pointers.
enum GaStatus ga_matern_cov(double h, const struct GaMaternSpec *s, double *out);

// Range parameter `alpha` whose correlation is 0.05 at distance `h_eff`.
//
// # Safety
// `out` must be a valid pointer.
enum GaStatus ga_effective_range_to_alpha(double h_eff, double nu, double *out);

// Builds a dataset from coordinate and value arrays of length `n`.
//
// # Safety
// The arrays must hold `n` values; `out` must be a valid pointer.
enum GaStatus ga_dataset_new(const double *x,
                             const double *y,
                             const double *z,
                             size_t n,
                             struct GaDataset **out);

// Simulates the field on an `n`-point perturbed grid. Locations use seed
// `seed − 1` and values seed `seed`.
//
// # Safety
// `s` and `out` must be valid pointers.
enum GaStatus ga_dataset_simulate(size_t n,
                                  const struct GaMaternSpec *s,
                                  uint64_t seed,
                                  struct GaDataset **out);

// Number of observations, or 0 for a null handle.
//
// # Safety
// `d` must be null or a live handle.
size_t ga_dataset_len(const struct GaDataset *d);

// Copies coordinates and values into arrays of length `n`, which must
// equal the dataset length. Any of the arrays may be null to skip it.
//
// # Safety
// `d` must be a live handle; non-null arrays must hold `n` values.
enum GaStatus ga_dataset_copy(const struct GaDataset *d, double *x, double *y, double *z, size_t n);

// # Safety
// `d` must be null or a handle not yet freed.
void ga_dataset_free(struct GaDataset *d);

// Exact Gaussian log-likelihood.
//
// # Safety
// Pointers must be valid.
enum GaStatus ga_exact_loglik(const struct GaDataset *d, const struct GaMaternSpec *s, double *out);

// Tile low-rank log-likelihood.
//
// # Safety
// Pointers must be valid.
enum GaStatus ga_tlr_loglik(const struct GaDataset *d,
                            const struct GaMaternSpec *s,
                            size_t nb,
                            size_t tlr_max_rank,
                            double tlr_acc,
                            double *out);

// Maximum-likelihood fit from `init` with default bounds.
//
// # Safety
// Pointers must be valid.
enum GaStatus ga_fit(const struct GaDataset *d,
                     const struct GaMaternSpec *init,
                     const struct GaFitOptions *opts,
                     struct GaFitResult *out);

// Simple kriging at `m` locations; `pred` and `mse` receive `m` values.
//
// # Safety
// Arrays must hold `m` values; other pointers must be valid.
enum GaStatus ga_krige(const struct GaDataset *d,
                       const struct GaMaternSpec *s,
                       const double *px,
                       const double *py,
                       size_t m,
                       double *pred,
                       double *mse);

// Prediction-efficiency criteria of `approx` against `truth` at `m`
// prediction locations.
//
// # Safety
// Arrays must hold `m` values; other pointers must be valid.
enum GaStatus ga_assess(const struct GaDataset *d,
                        const struct GaMaternSpec *truth,
                        const struct GaMaternSpec *approx,
                        const double *px,
                        const double *py,
                        size_t m,
                        enum GaMethod method,
                        struct GaReport **out);

// # Safety
// Pointers must be valid.
enum GaStatus ga_report_summary(const struct GaReport *r, struct GaSummary *out);

// Copies per-location LOE and MOM into arrays of length `m` (either may be
// null).
//
// # Safety
// `r` must be a live handle; non-null arrays must hold `m` values.
enum GaStatus ga_report_values(const struct GaReport *r, double *loe, double *mom, size_t m);

// # Safety
// `r` must be null or a handle not yet freed.
void ga_report_free(struct GaReport *r);

// Conditional K-L divergence of the approximate predictive distribution
// from the true one at `m` locations.
//
// # Safety
// Arrays must hold `m` values; other pointers must be valid.
enum GaStatus ga_kl_divergence(const struct GaDataset *d,
                               const struct GaMaternSpec *truth,
                               const struct GaMaternSpec *approx,
                               const double *px,
                               const double *py,
                               size_t m,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEOASSESS_H */
