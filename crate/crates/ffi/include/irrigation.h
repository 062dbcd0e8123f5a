#ifndef IRRIGATION_H
#define IRRIGATION_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IrrStatus {
  IRR_STATUS_OK = 0,
  IRR_STATUS_NULL_POINTER = 1,
  IRR_STATUS_INVALID_UTF8 = 2,
  /**
   * Unparseable or inconsistent input.
   */
  IRR_STATUS_MALFORMED = 3,
  /**
   * Structurally invalid flow.
   */
  IRR_STATUS_INVALID_FLOW = 4,
  /**
   * The optimizer stopped above its gradient tolerance; the output is still set.
   */
  IRR_STATUS_NOT_CONVERGED = 5,
  /**
   * A panic was caught at the boundary.
   */
  IRR_STATUS_INTERNAL = 6,
} IrrStatus;

/**
 * Opaque flow handle.
 */
typedef struct IrrFlow IrrFlow;

typedef struct IrrOptimizeOptions {
  uint32_t max_iters;
  double grad_tol;
  uint64_t seed;
  bool fix_boundary;
  bool fix_root;
  bool zero_barycenter;
  bool boundary_term;
  bool topology_moves;
} IrrOptimizeOptions;

typedef struct IrrEnergy {
  double perimeter;
  double kinetic;
  double internal;
  /**
   * NaN when the flow has no leaf radius.
   */
  double boundary_norm_sq;
  /**
   * NaN when the flow has no leaf radius.
   */
  double total;
} IrrEnergy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *irr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *irr_version(void);

/**
 * Default optimizer options.
 */
struct IrrOptimizeOptions irr_optimize_options_default(void);

/**
 * Parses a flow from NUL-terminated JSON.
 *
 * # Safety
 * `json` must be a valid C string and `out` a valid pointer.
 */
enum IrrStatus irr_flow_from_json(const char *json, struct IrrFlow **out);

/**
 * Serializes the flow to JSON; release the string with [`irr_string_free`].
 *
 * # Safety
 * `flow` must come from this library and `out` must be a valid pointer.
 */
enum IrrStatus irr_flow_to_json(const struct IrrFlow *flow, char **out);

/**
 * Dyadic branching from the uniform grid on the unit square to a Dirac.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum IrrStatus irr_flow_square_to_dirac(uint32_t levels, struct IrrFlow **out);

/**
 * Symmetric V: leaves at `(±d, 0)` merge at the origin at `tau`, then stay
 * until `horizon`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum IrrStatus irr_flow_v(double d, double tau, double horizon, double eps, struct IrrFlow **out);

/**
 * # Safety
 * `flow` must come from this library or be null.
 */
void irr_flow_free(struct IrrFlow *flow);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void irr_string_free(char *s);

/**
 * Node and edge counts.
 *
 * # Safety
 * `flow` must come from this library; the out pointers must be valid.
 */
enum IrrStatus irr_flow_size(const struct IrrFlow *flow, size_t *nodes, size_t *edges);

/**
 * Structural validation; `violations` receives the number of problems found.
 *
 * # Safety
 * `flow` must come from this library and `violations` must be valid.
 */
enum IrrStatus irr_flow_validate(const struct IrrFlow *flow, size_t *violations);

/**
 * Energy breakdown over the flow's full time range.
 *
 * # Safety
 * `flow` must come from this library and `out` must be valid.
 */
enum IrrStatus irr_flow_energy(const struct IrrFlow *flow, struct IrrEnergy *out);

/**
 * Largest `Λ / I` over the backward subsystems of all non-leaf nodes.
 *
 * # Safety
 * `flow` must come from this library and `out` must be valid.
 */
enum IrrStatus irr_flow_max_equipartition(const struct IrrFlow *flow, double *out);

/**
 * Minimizes the energy. On `Ok` and `NotConverged` a new flow is stored in
 * `out`.
 *
 * # Safety
 * `flow` must come from this library; `opts` and `out` must be valid.
 */
enum IrrStatus irr_optimize(const struct IrrFlow *flow,
                            const struct IrrOptimizeOptions *opts,
                            struct IrrFlow **out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* IRRIGATION_H */
