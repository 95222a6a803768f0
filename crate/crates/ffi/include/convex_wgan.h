#ifndef CONVEX_WGAN_H
#define CONVEX_WGAN_H

/* Generated by cbindgen from the Rust sources; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CwStatus {
  CW_STATUS_OK = 0,
  CW_STATUS_INVALID_INPUT = 1,
  CW_STATUS_DIMENSION_MISMATCH = 2,
  CW_STATUS_RANK_DEFICIENT = 3,
  CW_STATUS_INFEASIBLE = 4,
  CW_STATUS_RECOVERY_FAILED = 5,
  CW_STATUS_INCOMPLETE_ARRANGEMENTS = 6,
  CW_STATUS_DIVERGED = 7,
  CW_STATUS_NON_STATIONARY = 8,
  CW_STATUS_IO = 9,
  CW_STATUS_NULL_POINTER = 10,
  CW_STATUS_PANIC = 11,
} CwStatus;

typedef enum CwActivation {
  CW_ACTIVATION_LINEAR = 0,
  CW_ACTIVATION_QUADRATIC = 1,
  CW_ACTIVATION_RELU = 2,
} CwActivation;

/**
 * Opaque dense matrix of doubles.
 */
typedef struct CwMatrix CwMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *cw_last_error_message(void);

/**
 * Builds a matrix from `rows × cols` row-major values.
 *
 * # Safety
 * `data` must point to `rows * cols` readable doubles and `out` to a
 * writable handle slot.
 */
enum CwStatus cw_matrix_new(size_t rows, size_t cols, const double *data, struct CwMatrix **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `m` must be null or a handle from this library that has not been freed.
 */
void cw_matrix_free(struct CwMatrix *m);

/**
 * Row count, or 0 for null.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t cw_matrix_rows(const struct CwMatrix *m);

/**
 * Column count, or 0 for null.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t cw_matrix_cols(const struct CwMatrix *m);

/**
 * Copies the entries in row-major order into `buf` of length `len`.
 *
 * # Safety
 * `m` must be a live handle and `buf` must hold `len` writable doubles.
 */
enum CwStatus cw_matrix_copy(const struct CwMatrix *m, double *buf, size_t len);

/**
 * Thresholded generator `G*` for a quadratic discriminator, with identity
 * orientation.
 *
 * # Safety
 * `x` must be a live handle and `out` a writable handle slot.
 */
enum CwStatus cw_svt_generator(const struct CwMatrix *x, double beta_d, struct CwMatrix **out);

/**
 * Closed-form linear-generator weights `W` with `(ZW)ᵀ(ZW) = V(Σ² − βI)_+Vᵀ`.
 *
 * # Safety
 * `z`, `x` must be live handles and `out` a writable handle slot.
 */
enum CwStatus cw_closed_form_weights(const struct CwMatrix *z,
                                     const struct CwMatrix *x,
                                     double beta_d,
                                     struct CwMatrix **out);

/**
 * Dual gap between real `x` and generated `g`. ReLU gaps are sampled
 * over `samples` seeded directions.
 *
 * # Safety
 * `x`, `g` must be live handles and `gap` writable.
 */
enum CwStatus cw_dual_gap(const struct CwMatrix *x,
                          const struct CwMatrix *g,
                          enum CwActivation activation,
                          size_t samples,
                          uint64_t seed,
                          double *gap);

/**
 * Feasibility of `g` against `x` at bound `beta_d`. Writes 1 or 0 into
 * `feasible` and the evaluated gap into `gap`.
 *
 * # Safety
 * `x`, `g` must be live handles; `feasible` and `gap` writable.
 */
enum CwStatus cw_check_feasible(const struct CwMatrix *x,
                                const struct CwMatrix *g,
                                enum CwActivation activation,
                                double beta_d,
                                size_t samples,
                                uint64_t seed,
                                int32_t *feasible,
                                double *gap);

/**
 * Solves the one-dimensional ReLU program with `reg_weight·‖w‖²`.
 * `w_out[i]` is paired with the `i`-th smallest sample.
 *
 * # Safety
 * `x` must hold `n` readable doubles, `w_out` `n` writable doubles and
 * `objective` must be writable.
 */
enum CwStatus cw_solve_1d(const double *x,
                          size_t n,
                          double beta_d,
                          double reg_weight,
                          double *w_out,
                          double *objective);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONVEX_WGAN_H */
