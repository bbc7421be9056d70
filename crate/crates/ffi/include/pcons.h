#ifndef PCONS_H
#define PCONS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define PCONS_METHOD_EULER 0

#define PCONS_METHOD_RK4 1

typedef enum PconsStatus {
  PCONS_STATUS_OK = 0,
  PCONS_STATUS_NULL_POINTER = 1,
  PCONS_STATUS_INVALID_ARGUMENT = 2,
  PCONS_STATUS_PARSE = 3,
  PCONS_STATUS_NUMERICAL = 4,
  PCONS_STATUS_DIVERGENCE = 5,
  PCONS_STATUS_PROTOCOL = 6,
  PCONS_STATUS_IO = 7,
  PCONS_STATUS_BUFFER_TOO_SMALL = 8,
  PCONS_STATUS_PANIC = 9,
} PconsStatus;

/**
 * A parsed problem.
 */
typedef struct PconsProblem PconsProblem;

/**
 * The final state of a solve.
 */
typedef struct PconsSolution PconsSolution;

typedef struct PconsOptions {
  double h;
  /**
   * `PCONS_METHOD_EULER` or `PCONS_METHOD_RK4`.
   */
  uint32_t method;
  double t_max;
  double kkt_tol;
  /**
   * Non-zero runs the message-passing simulation.
   */
  uint8_t decentralized;
} PconsOptions;

typedef struct PconsResiduals {
  double stationarity;
  double consensus;
  double complementarity;
  double feasibility;
} PconsResiduals;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into the library from the same thread.
 */
const char *pcons_last_error(void);

struct PconsOptions pcons_default_options(void);

/**
 * Parses a JSON problem document.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PconsStatus pcons_problem_from_json(const char *json, struct PconsProblem **out);

/**
 * # Safety
 * `p` must come from [`pcons_problem_from_json`] or be null.
 */
void pcons_problem_free(struct PconsProblem *p);

/**
 * Length of the stacked decision vector, 0 for a null handle.
 *
 * # Safety
 * `p` must be a live problem handle or null.
 */
size_t pcons_problem_dim(const struct PconsProblem *p);

/**
 * # Safety
 * `p` must be a live problem handle or null.
 */
size_t pcons_problem_agents(const struct PconsProblem *p);

/**
 * Writes the partial-consensus matrix row-major into `buf` (capacity `len`
 * entries) and its order into `order`. With a too-small buffer only
 * `order` is written and `BufferTooSmall` is returned.
 *
 * # Safety
 * `p` must be a live problem handle, `order` valid, `buf` valid for `len`
 * writes (it may be null when `len` is 0).
 */
enum PconsStatus pcons_problem_consensus_matrix(const struct PconsProblem *p,
                                                double *buf,
                                                size_t len,
                                                size_t *order);

/**
 * Integrates from the problem's own `init` (zeros when absent).
 *
 * # Safety
 * `p` must be a live problem handle, `opts` null (defaults) or valid, and
 * `out` a valid pointer.
 */
enum PconsStatus pcons_solve(const struct PconsProblem *p,
                             const struct PconsOptions *opts,
                             struct PconsSolution **out);

/**
 * # Safety
 * `s` must come from [`pcons_solve`] or be null.
 */
void pcons_solution_free(struct PconsSolution *s);

/**
 * Copies the final stacked `x` into `buf` (capacity `len`).
 *
 * # Safety
 * `s` must be a live solution handle and `buf` valid for `len` writes.
 */
enum PconsStatus pcons_solution_x(const struct PconsSolution *s, double *buf, size_t len);

/**
 * Objective at the final state; NaN for a null handle.
 *
 * # Safety
 * `s` must be a live solution handle or null.
 */
double pcons_solution_objective(const struct PconsSolution *s);

/**
 * # Safety
 * `s` must be a live solution handle or null.
 */
double pcons_solution_time(const struct PconsSolution *s);

/**
 * # Safety
 * `s` must be a live solution handle or null.
 */
size_t pcons_solution_steps(const struct PconsSolution *s);

/**
 * 1 if the run met the KKT tolerance, 0 if it hit `t_max`.
 *
 * # Safety
 * `s` must be a live solution handle or null.
 */
uint8_t pcons_solution_converged(const struct PconsSolution *s);

/**
 * # Safety
 * `s` must be a live solution handle and `out` valid.
 */
enum PconsStatus pcons_solution_residuals(const struct PconsSolution *s,
                                          struct PconsResiduals *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PCONS_H */
