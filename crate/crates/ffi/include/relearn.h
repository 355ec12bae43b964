#ifndef RELEARN_H
#define RELEARN_H

/* Generated by cbindgen from the relearn-ffi sources; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RelearnStatus {
  RELEARN_STATUS_OK = 0,
  RELEARN_STATUS_NULL_POINTER = 1,
  RELEARN_STATUS_INVALID_ARGUMENT = 2,
  RELEARN_STATUS_DIMENSION = 3,
  RELEARN_STATUS_NOT_STABILIZING = 4,
  RELEARN_STATUS_NUMERICAL = 5,
  RELEARN_STATUS_CONFIG = 6,
  RELEARN_STATUS_DIVERGENCE = 7,
  RELEARN_STATUS_PANIC = 8,
} RelearnStatus;

/**
 * Per-step series of a trajectory.
 */
typedef enum RelearnSeries {
  RELEARN_SERIES_J_ERR = 0,
  RELEARN_SERIES_THETA_ERR = 1,
  RELEARN_SERIES_RHO_TRUE = 2,
  RELEARN_SERIES_RHO_EST = 3,
  RELEARN_SERIES_GRAD_NORM = 4,
  RELEARN_SERIES_J_STAR = 5,
} RelearnSeries;

/**
 * A realized experiment configuration.
 */
typedef struct RelearnExperiment RelearnExperiment;

/**
 * The result of a closed-loop run.
 */
typedef struct RelearnTrajectory RelearnTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *relearn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *relearn_version(void);

/**
 * Stabilizing Riccati solution: writes `P` (n×n) and `K` (m×n).
 *
 * # Safety
 * `a`, `b`, `q`, `r` must point to n·n, n·m, n·n, m·m readable doubles;
 * `p_out` and `k_out` to n·n and m·n writable doubles.
 */
enum RelearnStatus relearn_dare(size_t n,
                                size_t m,
                                const double *a,
                                const double *b,
                                const double *q,
                                const double *r,
                                double *p_out,
                                double *k_out);

/**
 * `J(K) = ½ Tr P` of the gain `k` (m×n).
 *
 * # Safety
 * As for [`relearn_dare`]; `k` points to m·n doubles and `out` to one.
 */
enum RelearnStatus relearn_lqr_cost(size_t n,
                                    size_t m,
                                    const double *a,
                                    const double *b,
                                    const double *q,
                                    const double *r,
                                    const double *k,
                                    double *out);

/**
 * Policy gradient `∂J/∂K` (m×n).
 *
 * # Safety
 * As for [`relearn_lqr_cost`]; `g_out` points to m·n writable doubles.
 */
enum RelearnStatus relearn_lqr_gradient(size_t n,
                                        size_t m,
                                        const double *a,
                                        const double *b,
                                        const double *q,
                                        const double *r,
                                        const double *k,
                                        double *g_out);

/**
 * Parses and realizes a TOML configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated UTF-8 string and `out` writable.
 */
enum RelearnStatus relearn_experiment_from_toml(const char *toml, struct RelearnExperiment **out);

/**
 * A bundled configuration (`aircraft_static`, `aircraft_drifting`) with its
 * horizon replaced by `horizon`.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` writable.
 */
enum RelearnStatus relearn_experiment_bundled(const char *name,
                                              size_t horizon,
                                              struct RelearnExperiment **out);

/**
 * State and input dimensions.
 *
 * # Safety
 * `exp` must come from this library; `n` and `m` must be writable.
 */
enum RelearnStatus relearn_experiment_dims(const struct RelearnExperiment *exp,
                                           size_t *n,
                                           size_t *m);

/**
 * Copies the hex SHA-256 of the configuration (64 characters and a NUL)
 * into `buf`.
 *
 * # Safety
 * `exp` must come from this library and `buf` hold `cap` writable bytes.
 */
enum RelearnStatus relearn_experiment_hash(const struct RelearnExperiment *exp,
                                           char *buf,
                                           size_t cap);

/**
 * Runs the closed loop. A divergent run still yields the partial
 * trajectory in `out` and returns `Divergence`.
 *
 * # Safety
 * `exp` must come from this library and `out` be writable.
 */
enum RelearnStatus relearn_experiment_run(const struct RelearnExperiment *exp,
                                          bool drifting,
                                          struct RelearnTrajectory **out);

/**
 * Number of recorded steps.
 *
 * # Safety
 * `traj` must come from this library or be NULL (yields 0).
 */
size_t relearn_trajectory_len(const struct RelearnTrajectory *traj);

/**
 * Borrowed pointer to one per-step series; valid while `traj` lives.
 *
 * # Safety
 * `traj` must come from this library; `data` and `len` must be writable.
 */
enum RelearnStatus relearn_trajectory_series(const struct RelearnTrajectory *traj,
                                             enum RelearnSeries which,
                                             const double **data,
                                             size_t *len);

/**
 * Borrowed row-major states (`len × n`); valid while `traj` lives.
 *
 * # Safety
 * `traj` must come from this library; `data` and `len` must be writable.
 */
enum RelearnStatus relearn_trajectory_states(const struct RelearnTrajectory *traj,
                                             const double **data,
                                             size_t *len);

/**
 * JSON run summary, newly allocated; release with [`relearn_string_free`].
 *
 * # Safety
 * `traj` must come from this library.
 */
char *relearn_trajectory_summary_json(const struct RelearnTrajectory *traj);

/**
 * # Safety
 * `s` must come from [`relearn_trajectory_summary_json`] or be NULL.
 */
void relearn_string_free(char *s);

/**
 * # Safety
 * `exp` must come from this library or be NULL, and not be used afterwards.
 */
void relearn_experiment_free(struct RelearnExperiment *exp);

/**
 * # Safety
 * `traj` must come from this library or be NULL, and not be used afterwards.
 */
void relearn_trajectory_free(struct RelearnTrajectory *traj);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELEARN_H */
