#ifndef NETBRIDGE_H
#define NETBRIDGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NbStatus {
  NB_STATUS_OK = 0,
  NB_STATUS_NULL_POINTER = 1,
  NB_STATUS_INVALID_ARGUMENT = 2,
  NB_STATUS_PARSE = 3,
  NB_STATUS_INFEASIBLE = 4,
  NB_STATUS_NOT_CONVERGED = 5,
  NB_STATUS_BUFFER_TOO_SMALL = 6,
  NB_STATUS_PANIC = 7,
} NbStatus;

/**
 * Where a calibrated temperature sits.
 */
typedef enum NbBoundary {
  NB_BOUNDARY_INTERIOR = 0,
  NB_BOUNDARY_ZERO = 1,
  NB_BOUNDARY_INFINITE = 2,
} NbBoundary;

typedef struct NbBridge NbBridge;

typedef struct NbGraph NbGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *nb_last_error_message(void);

/**
 * Static description of a status code.
 */
const char *nb_status_str(enum NbStatus status);

/**
 * Parses a graph document `{"n": .., "edges": [{"from", "to", "length"}]}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NbStatus nb_graph_from_json(const char *json, struct NbGraph **out);

/**
 * # Safety
 * `graph` must come from [`nb_graph_from_json`] and not be freed twice.
 */
void nb_graph_free(struct NbGraph *graph);

/**
 * Number of nodes, 0 for NULL.
 *
 * # Safety
 * `graph` must be NULL or a live handle.
 */
size_t nb_graph_node_count(const struct NbGraph *graph);

/**
 * Solves the bridge over the Boltzmann prior at `temperature` with
 * marginals `nu0`, `nu_n` of length `n` (the node count).
 *
 * # Safety
 * Pointers must be valid; `nu0` and `nu_n` must hold `n` doubles.
 */
enum NbStatus nb_bridge_solve(const struct NbGraph *graph,
                              const double *nu0,
                              const double *nu_n,
                              size_t n,
                              size_t steps,
                              double temperature,
                              double tol,
                              size_t max_iter,
                              struct NbBridge **out);

/**
 * Point-mass version of [`nb_bridge_solve`] with default tolerances.
 *
 * # Safety
 * `graph` must be a live handle and `out` a valid pointer.
 */
enum NbStatus nb_bridge_solve_delta(const struct NbGraph *graph,
                                    size_t from,
                                    size_t to,
                                    size_t steps,
                                    double temperature,
                                    struct NbBridge **out);

/**
 * # Safety
 * `bridge` must come from a solve call and not be freed twice.
 */
void nb_bridge_free(struct NbBridge *bridge);

/**
 * Number of steps `N`, 0 for NULL.
 *
 * # Safety
 * `bridge` must be NULL or a live handle.
 */
size_t nb_bridge_horizon(const struct NbBridge *bridge);

/**
 * Writes the `(N+1) x n` marginal flow into `out`.
 *
 * # Safety
 * `bridge` must be live and `out` must hold `len` doubles.
 */
enum NbStatus nb_bridge_marginal_flow(const struct NbBridge *bridge, double *out, size_t len);

/**
 * Writes the `n x n` policy matrix of step `t` into `out`.
 *
 * # Safety
 * `bridge` must be live and `out` must hold `len` doubles.
 */
enum NbStatus nb_bridge_transition(const struct NbBridge *bridge,
                                   size_t t,
                                   double *out,
                                   size_t len);

/**
 * Average length, entropy (nats) and free energy of the bridge. Any of the
 * output pointers may be NULL.
 *
 * # Safety
 * `bridge` must be live; non-NULL outputs must be writable.
 */
enum NbStatus nb_bridge_efficiency(const struct NbBridge *bridge,
                                   double *length,
                                   double *entropy,
                                   double *free_energy);

/**
 * Temperature whose `from -> to` bridge has average length `l_bar`.
 * Boundary outcomes report `0` or `INFINITY` with the matching flag.
 *
 * # Safety
 * `graph` must be live and the output pointers valid.
 */
enum NbStatus nb_calibrate(const struct NbGraph *graph,
                           size_t from,
                           size_t to,
                           size_t steps,
                           double l_bar,
                           double tol,
                           double *temperature,
                           enum NbBoundary *boundary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NETBRIDGE_H */
