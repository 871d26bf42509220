#ifndef CALF_H
#define CALF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of the C interface.
 */
typedef enum CalfStatus {
  CALF_STATUS_OK = 0,
  CALF_STATUS_NULL_POINTER = 1,
  CALF_STATUS_INVALID_UTF8 = 2,
  CALF_STATUS_CONFIG_ERROR = 3,
  CALF_STATUS_IO_ERROR = 4,
  CALF_STATUS_RUN_ERROR = 5,
  CALF_STATUS_INVALID_ARGUMENT = 6,
  CALF_STATUS_PANIC = 7,
} CalfStatus;

/**
 * Opaque experiment configuration.
 */
typedef struct CalfConfig CalfConfig;

/**
 * Opaque result of a batch of runs.
 */
typedef struct CalfSummary CalfSummary;

/**
 * Cost statistics of a summary.
 */
typedef struct CalfCostStats {
  uint64_t runs;
  double mean;
  double median;
  double q1;
  double q3;
  double reach_rate;
  double mean_fallback_fraction;
} CalfCostStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *calf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *calf_version(void);

/**
 * Parses key = value configuration text into `*out`.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum CalfStatus calf_config_parse(const char *text, struct CalfConfig **out);

/**
 * Default configuration.
 */
struct CalfConfig *calf_config_default(void);

/**
 * Configuration rendered back to text; free with [`calf_string_free`].
 *
 * # Safety
 * `cfg` must be null or a handle from this library.
 */
char *calf_config_to_text(const struct CalfConfig *cfg);

/**
 * Replaces the seed list with `first .. first + count`.
 *
 * # Safety
 * `cfg` must be null or a handle from this library.
 */
enum CalfStatus calf_config_set_seeds(struct CalfConfig *cfg, uint64_t first, uint64_t count);

/**
 * # Safety
 * `cfg` must be null or a handle from this library, not used afterwards.
 */
void calf_config_free(struct CalfConfig *cfg);

/**
 * Runs every (target, seed) pair. `out_dir` may be null to skip file
 * output; `threads` of 0 uses all cores.
 *
 * # Safety
 * `cfg` must be a handle from this library, `out_dir` null or a valid
 * string and `out` a valid pointer.
 */
enum CalfStatus calf_run(const struct CalfConfig *cfg,
                         const char *out_dir,
                         uint32_t threads,
                         uint64_t seed_base,
                         struct CalfSummary **out);

/**
 * # Safety
 * `summary` must be a handle from this library and `out` a valid pointer.
 */
enum CalfStatus calf_summary_stats(const struct CalfSummary *summary, struct CalfCostStats *out);

/**
 * Total cost of run `index` in (target, seed) order.
 *
 * # Safety
 * `summary` must be a handle from this library and `out` a valid pointer.
 */
enum CalfStatus calf_summary_run_cost(const struct CalfSummary *summary,
                                      uint64_t index,
                                      double *out);

/**
 * Summary as JSON; free with [`calf_string_free`].
 *
 * # Safety
 * `summary` must be null or a handle from this library.
 */
char *calf_summary_to_json(const struct CalfSummary *summary);

/**
 * # Safety
 * `summary` must be null or a handle from this library, not used afterwards.
 */
void calf_summary_free(struct CalfSummary *summary);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void calf_string_free(char *s);

/**
 * Lyapunov function of the parking task at the pose error `(x, y, theta)`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CalfStatus calf_lyapunov(double x, double y, double theta, double *out);

/**
 * Nominal parking action `(v, omega)` for the pose error `(x, y, theta)`
 * with sampling time `delta`.
 *
 * # Safety
 * `v` and `omega` must be valid pointers.
 */
enum CalfStatus calf_nominal_action(double x,
                                    double y,
                                    double theta,
                                    double delta,
                                    double *v,
                                    double *omega);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CALF_H */
