#ifndef HOPDYN_H
#define HOPDYN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Kind of critical-ratio result.
 */
typedef enum HopdynCriticalKind {
  HOPDYN_CRITICAL_KIND_VALUE = 0,
  HOPDYN_CRITICAL_KIND_ALWAYS_ACCUMULATES = 1,
  HOPDYN_CRITICAL_KIND_NEVER_ACCUMULATES = 2,
} HopdynCriticalKind;

/**
 * Result codes.
 */
typedef enum HopdynStatus {
  HOPDYN_STATUS_OK = 0,
  HOPDYN_STATUS_NULL_POINTER = 1,
  HOPDYN_STATUS_INVALID_INPUT = 2,
  HOPDYN_STATUS_NUMERICAL = 3,
  HOPDYN_STATUS_BUFFER_TOO_SMALL = 4,
  HOPDYN_STATUS_PANIC = 5,
} HopdynStatus;

/**
 * Opaque robot parameter set.
 */
typedef struct HopdynParams HopdynParams;

typedef struct HopdynMasses {
  double m_b;
  double m_f;
  double m_t;
  double body_fraction;
} HopdynMasses;

/**
 * Normalized per-hop energy terms.
 */
typedef struct HopdynLedger {
  double alpha_d;
  double eta_fdd;
  double eta_td;
  double alpha_s;
  double eta_mech;
  double eta_lo;
  double alpha_r;
  double eta_fdr;
} HopdynLedger;

typedef struct HopdynStanceOutcome {
  double liftoff_angle;
  double mu_required;
  double e_vertical;
  double e_horizontal;
  double e_rotational;
  double e_foot_loss;
  double stance_time;
  bool fell_over;
} HopdynStanceOutcome;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty when none. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *hopdyn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hopdyn_version(void);

/**
 * New handle with the prototype parameters. Free with [`hopdyn_params_free`].
 */
struct HopdynParams *hopdyn_params_default(void);

/**
 * Parses and validates a JSON parameter record into a new handle.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out_handle` a valid pointer.
 */
enum HopdynStatus hopdyn_params_from_json(const char *json, struct HopdynParams **out_handle);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `handle` must come from this library and not be used afterwards.
 */
void hopdyn_params_free(struct HopdynParams *handle);

/**
 * Copy of a handle with new body and foot masses; stiffness and damping follow the masses.
 *
 * # Safety
 * `handle` and `out_handle` must be valid pointers.
 */
enum HopdynStatus hopdyn_params_with_masses(const struct HopdynParams *handle,
                                            double m_b,
                                            double m_f,
                                            struct HopdynParams **out_handle);

/**
 * # Safety
 * `handle` and `out_masses` must be valid pointers.
 */
enum HopdynStatus hopdyn_params_masses(const struct HopdynParams *handle,
                                       struct HopdynMasses *out_masses);

/**
 * Free-fall terminal speed (m/s).
 *
 * # Safety
 * `handle` and `out_speed` must be valid pointers.
 */
enum HopdynStatus hopdyn_terminal_velocity(const struct HopdynParams *handle, double *out_speed);

/**
 * Rebound-to-drop height ratio implied by a ledger.
 *
 * # Safety
 * `ledger` and `out_delta` must be valid pointers.
 */
enum HopdynStatus hopdyn_delta_rd(const struct HopdynLedger *ledger, double *out_delta);

/**
 * Rebound input ratio reaching `delta_target`; `out_flight` is set when it exceeds one.
 *
 * # Safety
 * `ledger`, `out_alpha` and `out_flight` must be valid pointers.
 */
enum HopdynStatus hopdyn_required_alpha_r(const struct HopdynLedger *ledger,
                                          double delta_target,
                                          double *out_alpha,
                                          bool *out_flight);

/**
 * Smallest constant rebound ratio that sustains hopping from `h_ref`. The value is
 * written only for [`HopdynCriticalKind::Value`].
 *
 * # Safety
 * `handle`, `out_alpha` and `out_kind` must be valid pointers.
 */
enum HopdynStatus hopdyn_critical_alpha(const struct HopdynParams *handle,
                                        double h_ref,
                                        double *out_alpha,
                                        enum HopdynCriticalKind *out_kind);

/**
 * Apex heights under constant rebound thrust `alpha_r` from release height `h0`, the
 * release height first. Writes at most `capacity` values and always the full count to
 * `out_len`; returns `BufferTooSmall` if they did not fit.
 *
 * # Safety
 * `out_heights` must point to `capacity` writable doubles; `handle` and `out_len` must be valid.
 */
enum HopdynStatus hopdyn_hop_sequence(const struct HopdynParams *handle,
                                      double alpha_r,
                                      double h0,
                                      size_t n_hops,
                                      double *out_heights,
                                      size_t capacity,
                                      size_t *out_len);

/**
 * Planar stance from touchdown speed (m/s) and leg angle (deg) with the default inertias.
 *
 * # Safety
 * `handle` and `out_outcome` must be valid pointers.
 */
enum HopdynStatus hopdyn_stance(const struct HopdynParams *handle,
                                double v_td,
                                double theta_deg,
                                struct HopdynStanceOutcome *out_outcome);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOPDYN_H */
