#ifndef COREBENCH_H
#define COREBENCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CbStatus {
  CB_STATUS_OK = 0,
  CB_STATUS_NULL_ARGUMENT = 1,
  CB_STATUS_INVALID_UTF8 = 2,
  CB_STATUS_IO = 3,
  CB_STATUS_PARSE = 4,
  CB_STATUS_INVALID = 5,
  CB_STATUS_RUN = 6,
  CB_STATUS_PANIC = 7,
} CbStatus;

// The outcome of one run.
typedef struct CbResult CbResult;

// A parsed scenario.
typedef struct CbScenario CbScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until
// the next call into this library from the same thread.
const char *cb_last_error(void);

// Reads a scenario file. Relative dataset paths resolve against the
// file's directory.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` writable.
enum CbStatus cb_scenario_load(const char *path, struct CbScenario **out);

// Parses a scenario from a JSON document.
//
// # Safety
// `json` must be a valid NUL-terminated string and `out` writable.
enum CbStatus cb_scenario_parse(const char *json, struct CbScenario **out);

// `CB_STATUS_OK` when the scenario passes validation, otherwise
// `CB_STATUS_INVALID` with every violation in the error message.
//
// # Safety
// `scenario` must come from `cb_scenario_load` or `cb_scenario_parse`.
enum CbStatus cb_scenario_validate(const struct CbScenario *scenario);

// Overrides the scenario seed.
//
// # Safety
// `scenario` must be a live handle.
enum CbStatus cb_scenario_set_seed(struct CbScenario *scenario, uint64_t seed);

// # Safety
// `scenario` must be null or a live handle not used afterwards.
void cb_scenario_free(struct CbScenario *scenario);

// Runs the scenario. When `out_dir` is non-null the dataset is exported
// there. An aborted run still yields a result; check
// `cb_result_completed`.
//
// # Safety
// `scenario` must be a live handle, `out_dir` null or a valid string,
// and `out` writable.
enum CbStatus cb_run(const struct CbScenario *scenario, const char *out_dir, struct CbResult **out);

// 1 when the run completed, 0 when it aborted or `result` is null.
//
// # Safety
// `result` must be null or a live handle.
int32_t cb_result_completed(const struct CbResult *result);

// Requests scheduled by the control-plane injector.
//
// # Safety
// `result` must be null or a live handle.
uint64_t cb_result_requests(const struct CbResult *result);

// Requests that completed successfully.
//
// # Safety
// `result` must be null or a live handle.
uint64_t cb_result_successes(const struct CbResult *result);

// User-plane packets sent.
//
// # Safety
// `result` must be null or a live handle.
uint64_t cb_result_packets(const struct CbResult *result);

// Telemetry samples over all monitored functions.
//
// # Safety
// `result` must be null or a live handle.
uint64_t cb_result_samples(const struct CbResult *result);

// # Safety
// `result` must be null or a live handle not used afterwards.
void cb_result_free(struct CbResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COREBENCH_H */
