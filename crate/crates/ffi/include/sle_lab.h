#ifndef SLE_LAB_H
#define SLE_LAB_H

/* Generated by cbindgen from the sle-lab-ffi crate; do not edit.   */
/* Regenerate: SLE_LAB_REGEN=1 cargo test -p sle-lab-ffi --test header */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes for every fallible entry point.
typedef enum {
  // Success; out-parameters are valid.
  SLE_STATUS_OK = 0,
  // A NULL pointer was passed where an object or out-pointer is required.
  SLE_STATUS_NULL_ARG = 1,
  // Parameter outside the documented domain (kappa range, label, sizes).
  SLE_STATUS_DOMAIN = 2,
  // The computation could not produce a finite result.
  SLE_STATUS_NUMERIC = 3,
  // An index was out of bounds for the handle's contents.
  SLE_STATUS_RANGE = 4,
  // Internal panic caught at the boundary; see sle_last_error.
  SLE_STATUS_PANIC = 5,
} SleStatus;

// Opaque sampled trace; create with sle_trace_new, release with
// sle_trace_free.
typedef struct SleTrace SleTrace;

// Hitting-probability estimate for one radius.
typedef struct {
  double epsilon;
  uint64_t hits;
  uint64_t trials;
  double p_hat;
  // Binomial standard error of p_hat.
  double std_err;
} SleHitEstimate;

// Martingale drift-test report for a two-curve product run.
typedef struct {
  uint64_t paths;
  uint64_t accepted;
  uint64_t rejected;
  // Sample mean of the final weight; 1 within noise when the weight is
  // a martingale.
  double mean;
  double std_err;
  // Mean under the flipped Schwarzian sign, for the same paths.
  double mean_flipped;
} SleDriftReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread. Never NULL; empty
// string when no failure has occurred. Valid until the next failing call
// on the same thread.
const char *sle_last_error(void);

// Crate version as a static NUL-terminated string.
const char *sle_version(void);

// Central charge c(kappa) = (3kappa - 8)(6 - kappa) / (2kappa).
//
// # Safety
// `out` must be a valid pointer to a double.
SleStatus sle_central_charge(double kappa, double *out);

// Kac weight h_{(r,s)}(kappa); r and s must be at least 1.
//
// # Safety
// `out` must be a valid pointer to a double.
SleStatus sle_kac_weight(double kappa, uint32_t r, uint32_t s, double *out);

// Trace dimension min(1 + kappa/8, 2).
//
// # Safety
// `out` must be a valid pointer to a double.
SleStatus sle_trace_dimension(double kappa, double *out);

// Hull boundary dimension: the trace value for kappa <= 4 and 1 + 2/kappa
// for 4 < kappa < 8; kappa >= 8 is out of range.
//
// # Safety
// `out` must be a valid pointer to a double.
SleStatus sle_hull_dimension(double kappa, double *out);

// Distance-decay exponent 2 - d for the phase-appropriate dimension d
// (trace for kappa <= 4, hull boundary for 4 < kappa < 8).
//
// # Safety
// `out` must be a valid pointer to a double.
SleStatus sle_distance_exponent(double kappa, double *out);

// Samples a driving path of speed kappa on n uniform steps over [0, T] and
// computes its trace. On success writes a heap handle the caller owns.
//
// # Safety
// `out` must be a valid pointer to a handle slot.
SleStatus sle_trace_new(double kappa, double t_total, size_t n, uint64_t seed, SleTrace **out);

// Number of trace points (n + 1 including the origin).
//
// # Safety
// `tr` must be a live handle from sle_trace_new or NULL.
size_t sle_trace_len(const SleTrace *tr);

// Reads point i as (t, re, im). Out-pointers may be NULL individually to
// skip a component.
//
// # Safety
// `tr` must be a live handle; non-NULL out-pointers must be valid doubles.
SleStatus sle_trace_point(const SleTrace *tr, size_t i, double *t, double *re, double *im);

// Releases a trace handle; NULL is a no-op.
//
// # Safety
// `tr` must be a live handle from sle_trace_new or NULL; it must not be
// used afterwards.
void sle_trace_free(SleTrace *tr);

// Monte Carlo estimate of P[dist(z0, trace) <= epsilon] by evolving z0
// through the discrete flow. Deterministic in (all inputs, seed).
//
// # Safety
// `out` must be a valid pointer to an estimate struct.
SleStatus sle_estimate_hit(double kappa,
                           double z0_re,
                           double z0_im,
                           double epsilon,
                           uint64_t trials,
                           double t_total,
                           size_t n_steps,
                           uint64_t seed,
                           SleHitEstimate *out);

// Steps required so the grid resolves hits at the given radius.
size_t sle_resolution_steps(double kappa, double t_total, double epsilon);

// Runs the two-curve martingale drift test: paths independent product runs
// from tips (x0_left, x0_right) to capacity time t_end, reporting the
// sample mean of the final weight. steps = 0 selects the resolution
// default.
//
// # Safety
// `out` must be a valid pointer to a report struct.
SleStatus sle_martingale_check(double kappa,
                               double x0_left,
                               double x0_right,
                               double t_end,
                               size_t paths,
                               uint64_t seed,
                               size_t steps,
                               SleDriftReport *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SLE_LAB_H */
