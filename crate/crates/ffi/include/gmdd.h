#ifndef GMDD_H
#define GMDD_H

#pragma once

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Outcome of every call.
typedef enum GmddStatus {
  GMDD_STATUS_OK = 0,
  GMDD_STATUS_NULL_POINTER = 1,
  GMDD_STATUS_INVALID_ARGUMENT = 2,
  GMDD_STATUS_DIMENSION_MISMATCH = 3,
  GMDD_STATUS_DEGENERATE_COVARIANCE = 4,
  GMDD_STATUS_COMPUTATION_FAILED = 5,
  GMDD_STATUS_PANIC = 6,
} GmddStatus;

typedef enum GmddEstimator {
  GMDD_ESTIMATOR_KNOWN = 0,
  GMDD_ESTIMATOR_PLUGIN = 1,
  GMDD_ESTIMATOR_UCENTERED = 2,
} GmddEstimator;

typedef enum GmddIcmFamily {
  GMDD_ICM_FAMILY_GAUSS = 0,
  GMDD_ICM_FAMILY_MDD = 1,
  GMDD_ICM_FAMILY_DL = 2,
  GMDD_ICM_FAMILY_ESC6 = 3,
} GmddIcmFamily;

// Numeric matrix, `n_rows × n_cols`.
typedef struct GmddDataset GmddDataset;

// Kernel family bound to a dimension.
typedef struct GmddKernel GmddKernel;

// Result of a χ² or bootstrap test.
typedef struct GmddTestResult GmddTestResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call on the same thread.
const char *gmdd_last_error(void);

// Library version as a static NUL-terminated string.
const char *gmdd_version(void);

// Copies a row-major `n_rows × n_cols` buffer into a new dataset.
//
// # Safety
// `data` must point to `n_rows * n_cols` doubles and `out` must be writable.
enum GmddStatus gmdd_dataset_new(const double *data,
                                 uintptr_t n_rows,
                                 uintptr_t n_cols,
                                 struct GmddDataset **out);

// # Safety
// `ds` must be null or a handle from [`gmdd_dataset_new`] not yet freed.
void gmdd_dataset_free(struct GmddDataset *ds);

// # Safety
// `ds` must be a live dataset handle.
uintptr_t gmdd_dataset_rows(const struct GmddDataset *ds);

// # Safety
// `ds` must be a live dataset handle.
uintptr_t gmdd_dataset_cols(const struct GmddDataset *ds);

// Parses a kernel name such as `gauss`, `mdd`, `srb:0.5` or `laplace:2`.
//
// # Safety
// `name` must be a NUL-terminated string and `out` must be writable.
enum GmddStatus gmdd_kernel_new(const char *name, uintptr_t dim, struct GmddKernel **out);

// # Safety
// `k` must be null or a handle from [`gmdd_kernel_new`] not yet freed.
void gmdd_kernel_free(struct GmddKernel *k);

// Estimates the metric of `u` (length `n_rows(z)`) given `z`.
//
// # Safety
// Pointers must be valid; `u` must hold `n_rows(z)` doubles.
enum GmddStatus gmdd_estimate(const double *u,
                              const struct GmddDataset *z,
                              const struct GmddKernel *kernel,
                              enum GmddEstimator estimator,
                              double *out);

// χ² test of `E[U|Z] = 0` with the pair `V = (h(Z), U − h(Z))`, `h(Z) = exp(0.5 Σ Z_l)`.
//
// # Safety
// Pointers must be valid; `u` must hold `n_rows(z)` doubles.
enum GmddStatus gmdd_mi_test(const double *u,
                             const struct GmddDataset *z,
                             const struct GmddKernel *kernel,
                             struct GmddTestResult **out);

// χ² specification test of `y = X β + U`, by IV when `instruments` is non-null.
//
// # Safety
// Pointers must be valid; `y` must hold `n_rows(x)` doubles. `instruments` may be null.
enum GmddStatus gmdd_spec_test(const double *y,
                               const struct GmddDataset *x,
                               const struct GmddDataset *instruments,
                               bool intercept,
                               const struct GmddKernel *kernel,
                               struct GmddTestResult **out);

// Wild-bootstrap ICM specification test with Mammen multipliers.
//
// # Safety
// Pointers must be valid; `y` must hold `n_rows(x)` doubles. `instruments` may be null.
enum GmddStatus gmdd_spec_boot(const double *y,
                               const struct GmddDataset *x,
                               const struct GmddDataset *instruments,
                               bool intercept,
                               enum GmddIcmFamily family,
                               uintptr_t replicates,
                               uint64_t seed,
                               struct GmddTestResult **out);

// # Safety
// `r` must be a live result handle.
double gmdd_result_statistic(const struct GmddTestResult *r);

// # Safety
// `r` must be a live result handle.
double gmdd_result_p_value(const struct GmddTestResult *r);

// Degrees of freedom; 0 for bootstrap results.
//
// # Safety
// `r` must be a live result handle.
uintptr_t gmdd_result_df(const struct GmddTestResult *r);

// Retained rank of the covariance; 0 for bootstrap results.
//
// # Safety
// `r` must be a live result handle.
uintptr_t gmdd_result_retained_rank(const struct GmddTestResult *r);

// # Safety
// `r` must be null or a result handle not yet freed.
void gmdd_result_free(struct GmddTestResult *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GMDD_H */
