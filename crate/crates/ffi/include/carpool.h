#ifndef CARPOOL_H
#define CARPOOL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CarpoolStatus {
  CARPOOL_STATUS_OK = 0,
  CARPOOL_STATUS_NULL_POINTER = 1,
  CARPOOL_STATUS_INVALID_ARGUMENT = 2,
  CARPOOL_STATUS_OUT_OF_GRID = 3,
  CARPOOL_STATUS_DOMAIN = 4,
  CARPOOL_STATUS_CONFIG = 5,
  CARPOOL_STATUS_IO = 6,
  CARPOOL_STATUS_FORMAT = 7,
  CARPOOL_STATUS_EPISODE_DONE = 8,
  CARPOOL_STATUS_TRAINING = 9,
  CARPOOL_STATUS_PANIC = 10,
} CarpoolStatus;

/**
 * Opaque single-taxi environment.
 */
typedef struct CarpoolEnv CarpoolEnv;

/**
 * Opaque travel-time model.
 */
typedef struct CarpoolEta CarpoolEta;

typedef struct CarpoolRegion {
  double lat_min;
  double lat_max;
  double lon_min;
  double lon_max;
} CarpoolRegion;

typedef struct CarpoolEnvConfig {
  /**
   * Pickup search window for the first trip, seconds.
   */
  double search_window;
  /**
   * Share of the first trip's duration spent looking for a second, in (0, 1).
   */
  double carpool_fraction;
  /**
   * Clock advance on wait or failed assignment, seconds.
   */
  double wait_delay;
  struct CarpoolRegion region;
  /**
   * Non-zero for weekend episodes.
   */
  int weekend;
} CarpoolEnvConfig;

typedef struct CarpoolState {
  double lat;
  double lon;
  /**
   * Seconds since midnight.
   */
  double time;
  int weekend;
} CarpoolState;

typedef struct CarpoolStep {
  struct CarpoolState next;
  /**
   * Effective distance, miles.
   */
  double reward;
  int done;
  /**
   * Trips assigned in this step (0, 1 or 2).
   */
  int trips;
  /**
   * 0 when no carpool happened, 1 for path I, 2 for path II.
   */
  int path;
} CarpoolStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the next failing call.
 */
const char *carpool_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *carpool_version(void);

/**
 * Defaults: 600 s window, 0.5 carpool fraction, 600 s wait, downtown region, weekday.
 */
struct CarpoolEnvConfig carpool_env_config_default(void);

/**
 * Region of a synthetic preset: 0 dense, 1 sparse.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CarpoolStatus carpool_preset_region(int preset, struct CarpoolRegion *out);

/**
 * Constant-speed estimator: great-circle miles times `detour`, driven at `speed_mph`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CarpoolStatus carpool_eta_constant(double speed_mph, double detour, struct CarpoolEta **out);

/**
 * Loads an ST-NN model directory written by `carpool eta train`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CarpoolStatus carpool_eta_load(const char *dir, struct CarpoolEta **out);

/**
 * Travel time in seconds between two points.
 *
 * # Safety
 * `eta` must come from this library and `seconds` must be a valid pointer.
 */
enum CarpoolStatus carpool_eta_travel_time(const struct CarpoolEta *eta,
                                           double from_lat,
                                           double from_lon,
                                           double to_lat,
                                           double to_lon,
                                           double time_of_day,
                                           int weekend,
                                           double *seconds);

/**
 * # Safety
 * `eta` must come from this library or be NULL; it must not be used afterwards.
 */
void carpool_eta_free(struct CarpoolEta *eta);

/**
 * Environment over trips read from a CSV in the canonical schema, filtered by the default outlier rules.
 * The environment keeps its own reference to `eta`.
 *
 * # Safety
 * Pointers must be valid; `csv_path` NUL-terminated.
 */
enum CarpoolStatus carpool_env_from_csv(const char *csv_path,
                                        const struct CarpoolEnvConfig *config,
                                        const struct CarpoolEta *eta,
                                        struct CarpoolEnv **out);

/**
 * Environment over one synthetic day of a preset (0 dense, 1 sparse) inside `config`'s region.
 *
 * # Safety
 * Pointers must be valid.
 */
enum CarpoolStatus carpool_env_synthetic(int preset,
                                         uint64_t seed,
                                         const struct CarpoolEnvConfig *config,
                                         const struct CarpoolEta *eta,
                                         struct CarpoolEnv **out);

/**
 * # Safety
 * `env` must come from this library or be NULL; it must not be used afterwards.
 */
void carpool_env_free(struct CarpoolEnv *env);

/**
 * Starts an episode at midnight in a random region cell chosen by `seed`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum CarpoolStatus carpool_env_reset(struct CarpoolEnv *env,
                                     uint64_t seed,
                                     struct CarpoolState *state);

/**
 * Applies `action` (0 wait, 1 take one, 2 take two) to the current state.
 *
 * # Safety
 * Pointers must be valid.
 */
enum CarpoolStatus carpool_env_step(struct CarpoolEnv *env, int action, struct CarpoolStep *step);

/**
 * Whether single and carpool assignments would succeed from `state`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum CarpoolStatus carpool_env_feasible(const struct CarpoolEnv *env,
                                        const struct CarpoolState *state,
                                        int *take_one,
                                        int *take_two);

/**
 * Fixed-policy action at `state`: carpool if feasible, else one trip, else wait.
 *
 * # Safety
 * Pointers must be valid.
 */
enum CarpoolStatus carpool_fixed_policy_action(const struct CarpoolEnv *env,
                                               const struct CarpoolState *state,
                                               int *action);

/**
 * Number of trips the environment can assign.
 *
 * # Safety
 * `env` must be valid or NULL (returns 0).
 */
size_t carpool_env_trip_count(const struct CarpoolEnv *env);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CARPOOL_H */
