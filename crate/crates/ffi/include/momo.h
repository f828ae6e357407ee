#ifndef MOMO_H
#define MOMO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MomoStatus {
  MOMO_STATUS_OK = 0,
  MOMO_STATUS_NULL_POINTER = 1,
  MOMO_STATUS_DIMENSION = 2,
  MOMO_STATUS_CONFIG = 3,
  MOMO_STATUS_NUMERICAL = 4,
  MOMO_STATUS_DOMAIN = 5,
  MOMO_STATUS_INTERNAL = 6,
} MomoStatus;

typedef enum MomoFeatureMap {
  MOMO_FEATURE_MAP_ELU_PLUS_ONE = 0,
  MOMO_FEATURE_MAP_IDENTITY = 1,
  MOMO_FEATURE_MAP_EXP = 2,
} MomoFeatureMap;

typedef enum MomoAttentionKind {
  MOMO_ATTENTION_KIND_SOFTMAX = 0,
  MOMO_ATTENTION_KIND_LINEAR = 1,
  MOMO_ATTENTION_KIND_MOMENTUM = 2,
} MomoAttentionKind;

/**
 * Quadratic `½xᵀAx + xᵀb` (opaque).
 */
typedef struct MomoQuadratic MomoQuadratic;

/**
 * Recurrent attention state (opaque).
 */
typedef struct MomoRecurrentState MomoRecurrentState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after success.
 * The pointer stays valid until the next call on this thread.
 */
const char *momo_last_error_message(void);

/**
 * Zero state for keys of length `key_dim` and values of length `value_dim`.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum MomoStatus momo_recurrent_state_new(size_t key_dim,
                                         size_t value_dim,
                                         struct MomoRecurrentState **out);

/**
 * # Safety
 * `state` must be null or come from [`momo_recurrent_state_new`] and not be
 * freed twice.
 */
void momo_recurrent_state_free(struct MomoRecurrentState *state);

/**
 * Tokens consumed so far; 0 for a null handle.
 *
 * # Safety
 * `state` must be null or a live handle.
 */
size_t momo_recurrent_state_index(const struct MomoRecurrentState *state);

/**
 * Scalars held by the state, `2·D·D_v + D`; 0 for a null handle.
 *
 * # Safety
 * `state` must be null or a live handle.
 */
size_t momo_recurrent_state_aux_elements(const struct MomoRecurrentState *state);

/**
 * One causal linear attention step. `q`, `k` have `key_dim` entries, `v`
 * and `out` have `value_dim`.
 *
 * # Safety
 * `state` must be a live handle and the buffers valid for their lengths.
 */
enum MomoStatus momo_recurrent_state_step_linear(struct MomoRecurrentState *state,
                                                 const double *q,
                                                 const double *k,
                                                 const double *v,
                                                 enum MomoFeatureMap feature_map,
                                                 double eps,
                                                 double *out);

/**
 * One causal momentum attention step with momentum `beta` and step `gamma`.
 *
 * # Safety
 * As [`momo_recurrent_state_step_linear`].
 */
enum MomoStatus momo_recurrent_state_step_momentum(struct MomoRecurrentState *state,
                                                   const double *q,
                                                   const double *k,
                                                   const double *v,
                                                   double beta,
                                                   double gamma,
                                                   enum MomoFeatureMap feature_map,
                                                   double eps,
                                                   double *out);

/**
 * Batch attention over `batch` sequences of `len` tokens. `q`, `k` are
 * `batch·len·d`, `v` and `out` are `batch·len·dv`. `beta`, `gamma` are read
 * only for `MOMO_ATTENTION_KIND_MOMENTUM`; `feature_map` and `eps` are
 * ignored for softmax.
 *
 * # Safety
 * Buffers must be valid for their lengths.
 */
enum MomoStatus momo_attention(enum MomoAttentionKind kind,
                               bool causal,
                               const double *q,
                               const double *k,
                               const double *v,
                               size_t batch,
                               size_t len,
                               size_t d,
                               size_t dv,
                               double beta,
                               double gamma,
                               enum MomoFeatureMap feature_map,
                               double eps,
                               double *out);

/**
 * `(1 − √(γν))²`; `MOMO_STATUS_DOMAIN` unless `γν ∈ (0, 1]`.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum MomoStatus momo_optimal_momentum(double nu, double gamma, double *out);

/**
 * Adaptive momentum from two gradients of length `len`, projected to
 * `[0, 1 − delta]`.
 *
 * # Safety
 * Gradient buffers valid for `len` reads, `out` for one write.
 */
enum MomoStatus momo_adaptive_momentum_value(const double *grad_k,
                                             const double *grad_km1,
                                             size_t len,
                                             double delta,
                                             double *out);

/**
 * Quadratic with `d×d` row-major symmetric positive-definite `a` and `b`.
 *
 * # Safety
 * `a` valid for `d·d` reads, `b` for `d`, `out` for one write.
 */
enum MomoStatus momo_quadratic_new(const double *a,
                                   const double *b,
                                   size_t d,
                                   struct MomoQuadratic **out);

/**
 * # Safety
 * `p` must be null or come from [`momo_quadratic_new`] and not be freed twice.
 */
void momo_quadratic_free(struct MomoQuadratic *p);

/**
 * Smallest and largest eigenvalue of `A`.
 *
 * # Safety
 * `p` a live handle, `nu` and `ell` valid for one write each.
 */
enum MomoStatus momo_quadratic_spectrum(const struct MomoQuadratic *p, double *nu, double *ell);

/**
 * Heavy ball from `x0` for `iters` steps; writes `‖xᵏ − x*‖` for
 * `k = 0..=iters` into `dist_out` (length `iters + 1`).
 *
 * # Safety
 * `p` a live handle, `x0` valid for `d` reads, `dist_out` for `iters + 1` writes.
 */
enum MomoStatus momo_heavy_ball_run(const struct MomoQuadratic *p,
                                    const double *x0,
                                    double gamma,
                                    double beta,
                                    size_t iters,
                                    double *dist_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOMO_H */
