#ifndef DINF_H
#define DINF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DinfStatus {
  DINF_STATUS_OK = 0,
  DINF_STATUS_NULL_POINTER = 1,
  DINF_STATUS_INVALID_ARGUMENT = 2,
  DINF_STATUS_BUFFER_TOO_SMALL = 3,
  DINF_STATUS_IO = 4,
  DINF_STATUS_ARTIFACT = 5,
  DINF_STATUS_PROVENANCE = 6,
  DINF_STATUS_CONFIG = 7,
  DINF_STATUS_NUMERIC = 8,
  DINF_STATUS_PANIC = 9,
} DinfStatus;

typedef struct DinfCurvature DinfCurvature;

typedef struct DinfNet DinfNet;

typedef struct DinfSchedule DinfSchedule;

typedef struct DinfScores DinfScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. The pointer stays valid
 * until the next failing call on the same thread.
 */
const char *dinf_last_error_message(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DinfStatus dinf_net_load(const char *path, struct DinfNet **out);

/**
 * # Safety
 * `net` must come from [`dinf_net_load`] and not be used afterwards.
 */
void dinf_net_free(struct DinfNet *net);

/**
 * # Safety
 * `net` must be a live handle; `out` must be writable.
 */
enum DinfStatus dinf_net_param_count(const struct DinfNet *net, size_t *out);

/**
 * # Safety
 * See [`dinf_net_param_count`].
 */
enum DinfStatus dinf_net_data_dim(const struct DinfNet *net, size_t *out);

/**
 * Noise prediction `ε_θ(x_t, t)` written to `out` (`data_dim` values).
 *
 * # Safety
 * `x` holds `len` values; `out` holds `cap` values.
 */
enum DinfStatus dinf_net_forward(const struct DinfNet *net,
                                 const double *x,
                                 size_t len,
                                 size_t t,
                                 double *out,
                                 size_t cap);

/**
 * Linear `β` schedule with `steps` steps.
 *
 * # Safety
 * `out` must be writable.
 */
enum DinfStatus dinf_schedule_new(size_t steps,
                                  double beta_min,
                                  double beta_max,
                                  struct DinfSchedule **out);

/**
 * # Safety
 * `s` must come from [`dinf_schedule_new`] and not be used afterwards.
 */
void dinf_schedule_free(struct DinfSchedule *s);

/**
 * `ᾱ_t`, `t` in `1..=steps`.
 *
 * # Safety
 * `s` must be a live handle; `out` must be writable.
 */
enum DinfStatus dinf_schedule_alpha_bar(const struct DinfSchedule *s, size_t t, double *out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DinfStatus dinf_curvature_load(const char *path, struct DinfCurvature **out);

/**
 * # Safety
 * `c` must come from [`dinf_curvature_load`] and not be used afterwards.
 */
void dinf_curvature_free(struct DinfCurvature *c);

/**
 * `(H + damping·I)⁻¹ v` in parameter space.
 *
 * # Safety
 * `v` holds `len` values; `out` holds `cap` values.
 */
enum DinfStatus dinf_curvature_precondition(const struct DinfCurvature *c,
                                            double damping,
                                            const double *v,
                                            size_t len,
                                            double *out,
                                            size_t cap);

/**
 * Tie-aware Spearman correlation of two length-`n` arrays.
 *
 * # Safety
 * `xs` and `ys` hold `n` values; `out` must be writable.
 */
enum DinfStatus dinf_spearman(const double *xs, const double *ys, size_t n, double *out);

/**
 * Check the container structure and checksum of a file.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum DinfStatus dinf_artifact_verify(const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DinfStatus dinf_scores_load(const char *path, struct DinfScores **out);

/**
 * # Safety
 * `s` must come from [`dinf_scores_load`] and not be used afterwards.
 */
void dinf_scores_free(struct DinfScores *s);

/**
 * Number of queries and training examples.
 *
 * # Safety
 * `s` must be a live handle; `queries` and `train` must be writable.
 */
enum DinfStatus dinf_scores_shape(const struct DinfScores *s, size_t *queries, size_t *train);

/**
 * Row-major copy of the score grid.
 *
 * # Safety
 * `out` holds `cap` values.
 */
enum DinfStatus dinf_scores_copy(const struct DinfScores *s, double *out, size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DINF_H */
