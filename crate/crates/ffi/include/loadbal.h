#ifndef LOADBAL_H
#define LOADBAL_H

/* Generated by cbindgen from the loadbal-ffi crate. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LbStatus {
  LB_STATUS_OK = 0,
  LB_STATUS_NULL_POINTER = 1,
  LB_STATUS_INVALID_INPUT = 2,
  LB_STATUS_NON_CONVERGENCE = 3,
  LB_STATUS_INDEX_OUT_OF_RANGE = 4,
  LB_STATUS_PANIC = 5,
} LbStatus;

typedef enum LbRole {
  LB_ROLE_IDLE_SOURCE = 0,
  LB_ROLE_ACTIVE_SOURCE = 1,
  LB_ROLE_NEUTRAL = 2,
  LB_ROLE_SINK = 3,
  LB_ROLE_RELAY = 4,
} LbRole;

typedef enum LbPolicy {
  LB_POLICY_STATIC_OPTIMAL = 0,
  LB_POLICY_NO_BALANCING = 1,
  LB_POLICY_SHORTEST_QUEUE = 2,
  LB_POLICY_MIN_EXPECTED_DELAY = 3,
  LB_POLICY_DYNAMIC_THRESHOLD = 4,
} LbPolicy;

/**
 * Opaque network handle.
 */
typedef struct LbNetwork LbNetwork;

/**
 * Opaque solution handle.
 */
typedef struct LbSolution LbSolution;

/**
 * Result of one simulation run. `ci_halfwidth` is NaN when too few jobs
 * were measured for batch means.
 */
typedef struct LbSimSummary {
  double mean_response;
  double ci_halfwidth;
  uint64_t measured_jobs;
  uint64_t transfers;
} LbSimSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL.
 *
 * The pointer stays valid until the next `lb_*` call on the same thread.
 */
const char *lb_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lb_version(void);

/**
 * Parses a scenario JSON document into a network handle.
 *
 * # Safety
 * `json` must be NULL or a valid NUL-terminated string; `out` must be NULL or
 * writable. On success `*out` owns a handle to release with
 * [`lb_network_free`].
 */
enum LbStatus lb_network_from_json(const char *json, struct LbNetwork **out);

/**
 * # Safety
 * `network` must be NULL or a handle from [`lb_network_from_json`] that has
 * not been freed.
 */
void lb_network_free(struct LbNetwork *network);

/**
 * # Safety
 * `network` must be a live handle or NULL; `out` must be writable or NULL.
 */
enum LbStatus lb_network_node_count(const struct LbNetwork *network, size_t *out);

/**
 * Solves for the optimal allocation using the scenario's solver settings.
 *
 * On [`LbStatus::NonConvergence`] `*out` still receives the best iterate.
 *
 * # Safety
 * `network` must be a live handle or NULL; `out` must be writable or NULL.
 * A non-NULL `*out` must be released with [`lb_solution_free`].
 */
enum LbStatus lb_solve(const struct LbNetwork *network, struct LbSolution **out);

/**
 * Like [`lb_solve`] with explicit tolerances for the price bisection and
 * the traffic fixed point.
 *
 * # Safety
 * Same contract as [`lb_solve`].
 */
enum LbStatus lb_solve_with_tol(const struct LbNetwork *network,
                                double alpha_tol,
                                double lambda_tol,
                                struct LbSolution **out);

/**
 * # Safety
 * `solution` must be NULL or a handle from [`lb_solve`] that has not been
 * freed.
 */
void lb_solution_free(struct LbSolution *solution);

/**
 * Common marginal delay of the sinks.
 *
 * # Safety
 * `solution` must be a live handle or NULL; `out` must be writable or NULL.
 */
enum LbStatus lb_solution_alpha(const struct LbSolution *solution, double *out);

/**
 * Total transfer traffic.
 *
 * # Safety
 * `solution` must be a live handle or NULL; `out` must be writable or NULL.
 */
enum LbStatus lb_solution_lambda(const struct LbSolution *solution, double *out);

/**
 * Extra marginal delay paid by sources.
 *
 * # Safety
 * `solution` must be a live handle or NULL; `out` must be writable or NULL.
 */
enum LbStatus lb_solution_comm_price(const struct LbSolution *solution, double *out);

/**
 * Mean job response time of the allocation.
 *
 * # Safety
 * `solution` must be a live handle or NULL; `out` must be writable or NULL.
 */
enum LbStatus lb_solution_mean_response(const struct LbSolution *solution, double *out);

/**
 * Processing rate of node `index`.
 *
 * # Safety
 * `solution` must be a live handle or NULL; `out` must be writable or NULL.
 */
enum LbStatus lb_solution_beta(const struct LbSolution *solution, size_t index, double *out);

/**
 * Role of node `index`.
 *
 * # Safety
 * `solution` must be a live handle or NULL; `out` must be writable or NULL.
 */
enum LbStatus lb_solution_role(const struct LbSolution *solution, size_t index, enum LbRole *out);

/**
 * Transfer rate from node `from` to node `to` in the synthesized flow.
 *
 * # Safety
 * `solution` must be a live handle or NULL; `out` must be writable or NULL.
 */
enum LbStatus lb_solution_flow(const struct LbSolution *solution,
                               size_t from,
                               size_t to,
                               double *out);

/**
 * Simulates `jobs` jobs under `policy` with the given seed.
 *
 * Static and dynamic policies solve the network first; the dynamic policy
 * uses the optimal prices as its thresholds.
 *
 * # Safety
 * `network` must be a live handle or NULL; `out` must be writable or NULL.
 */
enum LbStatus lb_simulate(const struct LbNetwork *network,
                          enum LbPolicy policy,
                          uint64_t jobs,
                          uint64_t seed,
                          struct LbSimSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOADBAL_H */
