#ifndef APS_TESTBED_H
#define APS_TESTBED_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. Negative values are errors.
 */
typedef enum ApsStatus {
  APS_STATUS_OK = 0,
  /**
   * The simulation has no steps left.
   */
  APS_STATUS_DONE = 1,
  APS_STATUS_NULL_POINTER = -1,
  APS_STATUS_INVALID_UTF8 = -2,
  APS_STATUS_CONFIG = -3,
  APS_STATUS_RUNTIME = -4,
  APS_STATUS_IO = -5,
  APS_STATUS_OUT_OF_RANGE = -6,
  APS_STATUS_PANIC = -7,
} ApsStatus;

/**
 * Opaque simulation handle.
 */
typedef struct ApsSimulation ApsSimulation;

/**
 * One control step of a trace.
 */
typedef struct ApsTraceRow {
  /**
   * min
   */
  double t;
  /**
   * mg/dL
   */
  double bg_true;
  /**
   * mg/dL
   */
  double cgm;
  /**
   * U/hr
   */
  double basal_cmd;
  /**
   * U
   */
  double bolus_cmd;
  /**
   * U/min
   */
  double delivered;
  /**
   * U
   */
  double iob;
  /**
   * g
   */
  double cho;
  bool fault_active;
  /**
   * Index into the rationale table; see [`aps_rationale_name`].
   */
  int32_t rationale;
} ApsTraceRow;

/**
 * Time-in-range breakdown, percent of samples.
 */
typedef struct ApsOutcomes {
  size_t samples;
  double pct_in_range;
  double pct_above_180;
  double pct_below_70;
  double pct_below_54;
  double pct_above_250;
  double mean_bg;
} ApsOutcomes;

typedef struct ApsDosingParams {
  /**
   * U/day
   */
  double tdd;
  /**
   * g/U
   */
  double cr;
  /**
   * mg/dL per U
   */
  double cf;
  /**
   * mg/dL per U
   */
  double isf;
} ApsDosingParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a simulation from an experiment JSON document. Profile file
 * references are resolved against the working directory.
 *
 * # Safety
 * `spec_json` must be a nul-terminated string and `out` a valid pointer.
 */
enum ApsStatus aps_simulation_new(const char *spec_json, struct ApsSimulation **out);

/**
 * Advances one control step. Returns `Done` once the experiment is over.
 * `row_out` may be null.
 *
 * # Safety
 * `sim` must come from [`aps_simulation_new`]; `row_out` must be null or valid.
 */
enum ApsStatus aps_simulation_step(struct ApsSimulation *sim, struct ApsTraceRow *row_out);

/**
 * Runs the remaining steps.
 *
 * # Safety
 * `sim` must come from [`aps_simulation_new`].
 */
enum ApsStatus aps_simulation_run(struct ApsSimulation *sim);

/**
 * Number of rows recorded so far; 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or come from [`aps_simulation_new`].
 */
size_t aps_simulation_len(const struct ApsSimulation *sim);

/**
 * # Safety
 * `sim` must come from [`aps_simulation_new`] and `out` must be valid.
 */
enum ApsStatus aps_simulation_row(const struct ApsSimulation *sim,
                                  size_t index,
                                  struct ApsTraceRow *out);

/**
 * Outcomes of the rows recorded so far.
 *
 * # Safety
 * `sim` must come from [`aps_simulation_new`] and `out` must be valid.
 */
enum ApsStatus aps_simulation_outcomes(const struct ApsSimulation *sim, struct ApsOutcomes *out);

/**
 * The recorded rows as trace CSV, with the experiment embedded.
 *
 * # Safety
 * `sim` must come from [`aps_simulation_new`] and `out` must be valid.
 */
enum ApsStatus aps_simulation_trace_csv(const struct ApsSimulation *sim, char **out);

/**
 * # Safety
 * `sim` must be null or come from [`aps_simulation_new`], and not be used afterwards.
 */
void aps_simulation_free(struct ApsSimulation *sim);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void aps_string_free(char *s);

/**
 * Dosing parameters from body weight (kg).
 *
 * # Safety
 * `out` must be valid.
 */
enum ApsStatus aps_derive_dosing_params(double body_weight, struct ApsDosingParams *out);

/**
 * Expands a campaign document into a JSON array of experiment specs.
 *
 * # Safety
 * `campaign_json` must be a nul-terminated string and `out` valid.
 */
enum ApsStatus aps_campaign_expand(const char *campaign_json, char **out);

/**
 * Name of a rationale index, or null when out of range. The string is static.
 */
const char *aps_rationale_name(int32_t index);

/**
 * Message of the last error on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *aps_last_error_message(void);

/**
 * Library version, static.
 */
const char *aps_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* APS_TESTBED_H */
