#ifndef HDB_H
#define HDB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum HdbStatus {
  HDB_STATUS_OK = 0,
  // A pointer argument was null.
  HDB_STATUS_NULL_POINTER = 1,
  // An argument failed validation.
  HDB_STATUS_INVALID_ARGUMENT = 2,
  // The request has no implementation for this model or utility.
  HDB_STATUS_UNSUPPORTED = 3,
  // A numerical routine failed.
  HDB_STATUS_NUMERICAL = 4,
  // Internal panic; the handle involved should be freed.
  HDB_STATUS_PANIC = 5,
} HdbStatus;

// Dual control families `c`, `c sqrt(v)` and `c v`.
typedef enum HdbFamily {
  HDB_FAMILY_CONSTANT = 0,
  HDB_FAMILY_TIMES_SQRT_V = 1,
  HDB_FAMILY_TIMES_V = 2,
} HdbFamily;

// Model, utility, evaluation point and numerical settings.
typedef struct HdbModel HdbModel;

// Result of a candidate search.
typedef struct HdbReport HdbReport;

// One candidate's bounds. Missing values are NaN.
typedef struct HdbRow {
  double lb;
  double lb_se;
  double ub;
  double ub_se;
  // Number of coefficients; see `hdb_report_coefficients`.
  size_t pieces;
  // Nonzero when this candidate failed.
  int32_t failed;
} HdbRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. Valid until the
// next failing call on the same thread.
const char *hdb_last_error(void);

// Creates a model with power utility `p = 1/2`, state `(t, x, v) = (0, 1, 0.5)`,
// horizon 1 and default simulation settings.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum HdbStatus hdb_model_new(double r,
                             double rho,
                             double kappa,
                             double theta,
                             double xi,
                             double market_price,
                             struct HdbModel **out);

// # Safety
// `model` must be null or a handle from [`hdb_model_new`] not yet freed.
void hdb_model_free(struct HdbModel *model);

// `x^p / p`.
//
// # Safety
// `model` must be a live handle.
enum HdbStatus hdb_model_set_power(struct HdbModel *model, double p);

// The non-HARA utility.
//
// # Safety
// `model` must be a live handle.
enum HdbStatus hdb_model_set_nonhara(struct HdbModel *model);

// `min(x, cap)`.
//
// # Safety
// `model` must be a live handle.
enum HdbStatus hdb_model_set_yaari(struct HdbModel *model, double cap);

// Evaluation time, wealth, variance and horizon.
//
// # Safety
// `model` must be a live handle.
enum HdbStatus hdb_model_set_state(struct HdbModel *model,
                                   double t,
                                   double x,
                                   double v,
                                   double horizon);

// Paths, steps and seed of every simulation; `antithetic` nonzero pairs paths.
//
// # Safety
// `model` must be a live handle.
enum HdbStatus hdb_model_set_simulation(struct HdbModel *model,
                                        size_t paths,
                                        size_t steps,
                                        uint64_t seed,
                                        int32_t antithetic);

// Lower bound by simulation even where a closed form exists.
//
// # Safety
// `model` must be a live handle.
enum HdbStatus hdb_model_force_mc_lower(struct HdbModel *model, int32_t enable);

// Closed-form benchmark for the model's utility.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum HdbStatus hdb_benchmark(const struct HdbModel *model, double *out);

// Bounds for one piecewise-constant control with `n` equal pieces.
// Outputs may be null when not wanted.
//
// # Safety
// `model` must be a live handle, `coefficients` must point to `n` values,
// and each non-null output must be writable.
enum HdbStatus hdb_bounds(const struct HdbModel *model,
                          enum HdbFamily family,
                          const double *coefficients,
                          size_t n,
                          double *lb,
                          double *lb_se,
                          double *ub,
                          double *ub_se);

// Bounds over `count` grid values per piece on `[lo, hi]` with `pieces`
// pieces (Cartesian product).
//
// # Safety
// `model` must be a live handle and `out` writable.
enum HdbStatus hdb_optimize(const struct HdbModel *model,
                            enum HdbFamily family,
                            size_t count,
                            double lo,
                            double hi,
                            size_t pieces,
                            struct HdbReport **out);

// # Safety
// `report` must be null or a handle from [`hdb_optimize`] not yet freed.
void hdb_report_free(struct HdbReport *report);

// Number of candidates.
//
// # Safety
// `report` must be a live handle and `out` writable.
enum HdbStatus hdb_report_len(const struct HdbReport *report, size_t *out);

// Row `index`.
//
// # Safety
// `report` must be a live handle and `out` writable.
enum HdbStatus hdb_report_row(const struct HdbReport *report, size_t index, struct HdbRow *out);

// Copies up to `capacity` coefficients of row `index` into `buf`.
//
// # Safety
// `report` must be a live handle and `buf` must hold `capacity` values.
enum HdbStatus hdb_report_coefficients(const struct HdbReport *report,
                                       size_t index,
                                       double *buf,
                                       size_t capacity);

// Largest lower bound and smallest upper bound with their row indices.
// Outputs may be null when not wanted; a missing bound is NaN with index
// `SIZE_MAX`.
//
// # Safety
// `report` must be a live handle and each non-null output writable.
enum HdbStatus hdb_report_tight(const struct HdbReport *report,
                                double *lb,
                                size_t *lb_index,
                                double *ub,
                                size_t *ub_index);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HDB_H */
