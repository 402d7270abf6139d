#ifndef MULTIFLOCK_H
#define MULTIFLOCK_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum MfStatus {
  MF_STATUS_OK = 0,
  MF_STATUS_NULL_POINTER = 1,
  MF_STATUS_INVALID_UTF8 = 2,
  /**
   * Unparsable scenario, unknown preset or bad override.
   */
  MF_STATUS_CONFIG = 3,
  /**
   * Scenario parsed but failed validation.
   */
  MF_STATUS_VALIDATION = 4,
  MF_STATUS_IO = 5,
  /**
   * Collision, blow-up or other solver failure.
   */
  MF_STATUS_SOLVER = 6,
  MF_STATUS_UNSUPPORTED = 7,
  MF_STATUS_OUT_OF_RANGE = 8,
  /**
   * A Rust panic was caught at the boundary.
   */
  MF_STATUS_PANIC = 9,
} MfStatus;

/**
 * A parsed, validated scenario.
 */
typedef struct MfScenario MfScenario;

/**
 * A multi-flock phase state.
 */
typedef struct MfState MfState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread (empty after a success).
 * The pointer stays valid until the next call into the library.
 */
const char *mf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mf_version(void);

/**
 * Releases a string returned by the library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void mf_string_free(char *s);

/**
 * Parses and validates a scenario from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; output pointer writable.
 */
enum MfStatus mf_scenario_from_toml(const char *toml, struct MfScenario **out_scenario);

/**
 * Loads a built-in preset by name.
 *
 * # Safety
 * `name` must be a NUL-terminated string; output pointer writable.
 */
enum MfStatus mf_scenario_from_preset(const char *name, struct MfScenario **out_scenario);

/**
 * # Safety
 * `s` must be `NULL` or a handle from this library, freed at most once.
 */
void mf_scenario_free(struct MfScenario *s);

/**
 * Sets a dotted key (`coupling.epsilon`, `flocks.0.lambda`) to a TOML
 * literal and revalidates. The scenario is unchanged on failure.
 *
 * # Safety
 * Valid handle and NUL-terminated strings.
 */
enum MfStatus mf_scenario_set(struct MfScenario *s, const char *key, const char *value);

/**
 * Canonical TOML of the scenario; release with [`mf_string_free`].
 *
 * # Safety
 * Valid handle; output pointer writable.
 */
enum MfStatus mf_scenario_to_toml(const struct MfScenario *s, char **out_text);

/**
 * Runs the scenario into `out_dir`, writing the usual artifacts.
 * `threads = 0` uses the default worker count. `exit_code` receives the
 * run's exit code (0 success, 1 solver failure recorded in the manifest).
 *
 * # Safety
 * Valid handle, NUL-terminated path, writable `exit_code`.
 */
enum MfStatus mf_run(const struct MfScenario *s,
                     const char *out_dir,
                     size_t threads,
                     int32_t *exit_code);

/**
 * Samples the scenario's initial agent state (not available for hydro
 * scenarios).
 *
 * # Safety
 * Valid handle; output pointer writable.
 */
enum MfStatus mf_state_initial(const struct MfScenario *s, struct MfState **out_state);

/**
 * # Safety
 * `st` must be `NULL` or a handle from this library, freed at most once.
 */
void mf_state_free(struct MfState *st);

/**
 * Dimension, number of flocks and current time.
 *
 * # Safety
 * Valid handle; writable outputs.
 */
enum MfStatus mf_state_info(const struct MfState *st,
                            size_t *dim,
                            size_t *num_flocks,
                            double *time);

/**
 * Number of agents of flock `alpha`.
 *
 * # Safety
 * Valid handle; writable output.
 */
enum MfStatus mf_state_flock_len(const struct MfState *st, size_t alpha, size_t *len);

/**
 * Copies the `dim * n` positions of flock `alpha` into `buf`.
 *
 * # Safety
 * Valid handle; `buf` writable for `cap` doubles.
 */
enum MfStatus mf_state_positions(const struct MfState *st, size_t alpha, double *buf, size_t cap);

/**
 * Copies the `dim * n` velocities of flock `alpha` into `buf`.
 *
 * # Safety
 * Valid handle; `buf` writable for `cap` doubles.
 */
enum MfStatus mf_state_velocities(const struct MfState *st, size_t alpha, double *buf, size_t cap);

/**
 * Advances the state to `t_end` with the scenario's model and integrator.
 * On solver failure the state holds the last accepted step.
 *
 * # Safety
 * Valid handles.
 */
enum MfStatus mf_state_advance(struct MfState *st, const struct MfScenario *s, double t_end);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MULTIFLOCK_H */
