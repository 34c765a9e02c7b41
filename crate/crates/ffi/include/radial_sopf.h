#ifndef RADIAL_SOPF_H
#define RADIAL_SOPF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define SOPF_OK 0

/**
 * Invalid argument (null pointer, bad length, option out of range).
 */
#define SOPF_ERR_ARGUMENT 1

/**
 * Input text failed to parse or validate.
 */
#define SOPF_ERR_PARSE 2

/**
 * The optimization model is infeasible.
 */
#define SOPF_ERR_INFEASIBLE 3

/**
 * The solver stopped without a conclusive status.
 */
#define SOPF_ERR_NUMERICAL 4

/**
 * Unexpected internal failure.
 */
#define SOPF_ERR_INTERNAL 5

/**
 * Opaque radial network handle.
 */
typedef struct SopfNetwork SopfNetwork;

/**
 * Opaque scenario tree handle.
 */
typedef struct SopfTree SopfTree;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the message of the most recent error on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sopf_last_error_message(void);

/**
 * Parses a network from JSON text; returns null on failure.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string.
 */
struct SopfNetwork *sopf_network_load_json(const char *json);

/**
 * Frees a network handle; null is accepted.
 *
 * # Safety
 * `net` must come from `sopf_network_load_json` and not be freed twice.
 */
void sopf_network_free(struct SopfNetwork *net);

/**
 * Number of buses, or 0 for a null handle.
 *
 * # Safety
 * `net` must be a live handle or null.
 */
uintptr_t sopf_network_bus_count(const struct SopfNetwork *net);

/**
 * Number of lines, or 0 for a null handle.
 *
 * # Safety
 * `net` must be a live handle or null.
 */
uintptr_t sopf_network_line_count(const struct SopfNetwork *net);

/**
 * Builds a scenario tree from a JSON document with fields `params`
 * (diffusion parameters), `taus` (stage grid), and `branching`.
 * Returns null on failure.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string.
 */
struct SopfTree *sopf_tree_generate(const char *json, uint64_t seed);

/**
 * Parses a serialized scenario tree; returns null on failure.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string.
 */
struct SopfTree *sopf_tree_load_json(const char *json);

/**
 * Frees a tree handle; null is accepted.
 *
 * # Safety
 * `tree` must come from a tree constructor and not be freed twice.
 */
void sopf_tree_free(struct SopfTree *tree);

/**
 * Number of leaves (scenarios), or 0 for a null handle.
 *
 * # Safety
 * `tree` must be a live handle or null.
 */
uintptr_t sopf_tree_leaf_count(const struct SopfTree *tree);

/**
 * Solves the conic relaxation with the reference cost and writes the optimal
 * value to `objective_out`. `profile` holds one consumption factor per
 * stage. Returns an `SOPF_*` status code.
 *
 * # Safety
 * Handles must be live; `profile` must point to `profile_len` doubles;
 * `objective_out` must be a valid destination.
 */
int32_t sopf_solve(const struct SopfNetwork *net,
                   const struct SopfTree *tree,
                   const double *profile,
                   uintptr_t profile_len,
                   bool restricted,
                   double tol,
                   double *objective_out);

/**
 * Solves both relaxations and writes the relative gap bound ε to `eps_out`.
 * `finite_out` receives 1 when the bound is finite (restricted problem
 * feasible) and 0 otherwise, in which case `eps_out` is untouched.
 *
 * # Safety
 * Same contracts as `sopf_solve`; `eps_out` and `finite_out` must be valid
 * destinations.
 */
int32_t sopf_gap_bound(const struct SopfNetwork *net,
                       const struct SopfTree *tree,
                       const double *profile,
                       uintptr_t profile_len,
                       double tol,
                       double *eps_out,
                       int32_t *finite_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RADIAL_SOPF_H */
