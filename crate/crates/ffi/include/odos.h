#ifndef ODOS_H
#define ODOS_H

#include <stdint.h>
#include <stddef.h>

/**
 * Result code of every call.
 */
typedef enum OdosStatus {
  ODOS_STATUS_OK = 0,
  ODOS_STATUS_INVALID_ARGUMENT = 1,
  ODOS_STATUS_PARSE = 2,
  ODOS_STATUS_VALIDATION = 3,
  ODOS_STATUS_INFEASIBLE = 4,
  ODOS_STATUS_NUMERICAL = 5,
  ODOS_STATUS_IO = 6,
  ODOS_STATUS_INTERNAL = 7,
} OdosStatus;

/**
 * Opaque parsed configuration.
 */
typedef struct OdosConfig OdosConfig;

/**
 * Expected utility with its Monte Carlo standard error.
 */
typedef struct OdosEstimate {
  double mean;
  double std_error;
  uint64_t n_samples;
} OdosEstimate;

/**
 * Value of information of the configured design.
 */
typedef struct OdosVoi {
  double value;
  double baseline;
  double std_error;
  /**
   * 1 when the value strictly exceeds the expected cost, else 0.
   */
  int32_t eligible;
  /**
   * 1 when a negative estimate was clamped to zero.
   */
  int32_t clamped;
} OdosVoi;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string. Never free it.
 */
const char *odos_version(void);

/**
 * Message of the last failed call on this thread, or null.
 *
 * The pointer stays valid until the next library call on the same thread.
 */
const char *odos_last_error_message(void);

/**
 * Parses a JSON configuration into a new handle.
 *
 * `base_dir` anchors relative data paths and may be null for the working directory.
 *
 * # Safety
 * `json` must be a NUL-terminated string, `base_dir` null or NUL-terminated,
 * and `out` a valid pointer to writable storage.
 */
enum OdosStatus odos_config_parse(const char *json, const char *base_dir, struct OdosConfig **out);

/**
 * Releases a handle from [`odos_config_parse`]. Null is ignored.
 *
 * # Safety
 * `config` must come from [`odos_config_parse`] and not be freed twice.
 */
void odos_config_free(struct OdosConfig *config);

/**
 * Replaces the master seed of a configuration.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum OdosStatus odos_config_set_seed(struct OdosConfig *config, uint64_t seed);

/**
 * Runs `evaluate`, `optimize`, `voi` or `scenario <name>` and returns the
 * report as JSON. The report carries no timestamp, so equal inputs give
 * identical bytes. Release the string with [`odos_string_free`].
 *
 * # Safety
 * `config` must be a live handle, `command` NUL-terminated and `out_json` writable.
 */
enum OdosStatus odos_run(const struct OdosConfig *config, const char *command, char **out_json);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void odos_string_free(char *s);

/**
 * Expected utility of the configured design.
 *
 * # Safety
 * `config` must be a live handle and `out` writable.
 */
enum OdosStatus odos_evaluate(const struct OdosConfig *config, struct OdosEstimate *out);

/**
 * Value of information of the configured design.
 *
 * # Safety
 * `config` must be a live handle and `out` writable.
 */
enum OdosStatus odos_voi(const struct OdosConfig *config, struct OdosVoi *out);

/**
 * Transition matrix of the two-state chain over `dt`, written row-major to `out`.
 *
 * # Safety
 * `out` must point to four writable doubles.
 */
enum OdosStatus odos_ctmc_transition(double lambda, double mu, double dt, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ODOS_H */
