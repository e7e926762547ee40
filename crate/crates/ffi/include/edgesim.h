#ifndef EDGESIM_H
#define EDGESIM_H

/* Generated from the edgesim-ffi crate sources; edit those, not this file. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call in this library.
typedef enum EsStatus {
  ES_STATUS_OK = 0,
  // A required pointer argument was NULL.
  ES_STATUS_NULL_ARGUMENT = 1,
  // An input string was not valid UTF-8.
  ES_STATUS_INVALID_UTF8 = 2,
  // An input document did not parse as JSON of the expected shape.
  ES_STATUS_PARSE_ERROR = 3,
  // A scenario failed referential or range validation.
  ES_STATUS_VALIDATION_FAILED = 4,
  // A topic or pattern violated the topic grammar.
  ES_STATUS_INVALID_TOPIC = 5,
  // The named device has no shadow in the registry.
  ES_STATUS_UNKNOWN_DEVICE = 6,
  // The expected shadow version did not match the current one.
  ES_STATUS_VERSION_CONFLICT = 7,
  // The principal may not perform the requested shadow write.
  ES_STATUS_PERMISSION_DENIED = 8,
  // An argument was structurally valid but semantically out of range.
  ES_STATUS_INVALID_ARGUMENT = 9,
  // An internal failure; details via `es_last_error_message`.
  ES_STATUS_RUNTIME_ERROR = 10,
} EsStatus;

// An in-memory device-shadow registry on the system clock.
typedef struct EsShadowRegistry EsShadowRegistry;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Description of the most recent failure on this thread, or NULL if the
// last call succeeded. The caller owns the returned string.
char *es_last_error_message(void);

// Library version as a static string; do not free it.
const char *es_version(void);

// Release a string returned by any function in this library.
//
// # Safety
// `s` must be a pointer previously returned by this library (or NULL),
// and must not be used after this call.
void es_string_free(char *s);

// Match a subscription pattern (`+` = one level, trailing `#` = the
// rest, including nothing) against a concrete topic.
//
// # Safety
// `pattern` and `topic` must be NUL-terminated strings; `out_match`
// must be a valid pointer.
enum EsStatus es_topic_match(const char *pattern, const char *topic, bool *out_match);

// Validate a scenario document. On `Ok` *and* on `ValidationFailed`,
// `out_diagnostics_json` (if non-NULL) receives a JSON array of
// `{path, message}` objects — empty exactly when the scenario is clean.
//
// # Safety
// `scenario_json` must be a NUL-terminated string; `out_diagnostics_json`
// may be NULL.
enum EsStatus es_scenario_validate(const char *scenario_json, char **out_diagnostics_json);

// Run a scenario to completion. `out_events_jsonl` receives the full
// event log (one JSON record per line); `out_report_json` (optional)
// receives the summary report over that log.
//
// # Safety
// `scenario_json` must be a NUL-terminated string; `out_events_jsonl`
// must be valid; `out_report_json` may be NULL.
enum EsStatus es_scenario_run(const char *scenario_json,
                              bool concurrent,
                              char **out_events_jsonl,
                              char **out_report_json);

// Summarize an event log (the `events.jsonl` text) into the report
// document, independent of any run.
//
// # Safety
// `events_jsonl` must be a NUL-terminated string; `out_report_json`
// must be valid.
enum EsStatus es_log_report(const char *events_jsonl, char **out_report_json);

// Decide which zones to sanitize for the given occupant counts:
// isolation at `max_threshold_1`, living and staff at `max_threshold_2`.
// Writes `{"zones": [...]}` with zones in traversal order.
//
// # Safety
// `out_plan_json` must be a valid pointer.
enum EsStatus es_sanitize_plan(uint32_t number_iz,
                               uint32_t number_lz,
                               uint32_t number_sz,
                               uint32_t max_threshold_1,
                               uint32_t max_threshold_2,
                               char **out_plan_json);

// Evaluate one position snapshot for too-close pairs. `positions_json`
// is a JSON array of `{entity_id, x, y, ts}` (feet, shared timestamp);
// pairs strictly closer than `threshold_ft` are written as a JSON array
// of `{entity_a, entity_b, distance_ft, ts}`. Each call is independent
// (no cooldown state is carried between calls).
//
// # Safety
// `positions_json` must be a NUL-terminated string; `out_alerts_json`
// must be valid.
enum EsStatus es_distancing_alerts(const char *positions_json,
                                   double threshold_ft,
                                   char **out_alerts_json);

// Create an empty shadow registry. Free with [`es_shadow_registry_free`].
struct EsShadowRegistry *es_shadow_registry_new(void);

// Destroy a registry created by [`es_shadow_registry_new`].
//
// # Safety
// `registry` must come from `es_shadow_registry_new` (or be NULL) and
// must not be used afterwards.
void es_shadow_registry_free(struct EsShadowRegistry *registry);

// Register a device shadow at version 0. `kind` is one of the device
// kind names (`oximeter`, `thermometer`, `bp_monitor`, `door_sensor`,
// `motion_sensor`, `position_tag`, `wearable`, `camera`,
// `sanitizer_robot`). Re-registering an existing id only updates the
// owner.
//
// # Safety
// `registry` must be a live handle; the strings must be NUL-terminated.
enum EsStatus es_shadow_register(struct EsShadowRegistry *registry,
                                 const char *device_id,
                                 const char *kind,
                                 const char *owner,
                                 const char *home_gateway);

// Merge a reported-state patch (JSON object) into a shadow and bump its
// version. `expected_version < 0` means no precondition; otherwise the
// write is rejected with `VersionConflict` unless it equals the current
// version. On success writes the updated shadow document if
// `out_shadow_json` is non-NULL.
//
// # Safety
// `registry` must be a live handle; the strings must be NUL-terminated;
// `out_shadow_json` may be NULL.
enum EsStatus es_shadow_update_reported(struct EsShadowRegistry *registry,
                                        const char *device_id,
                                        const char *patch_json,
                                        int64_t expected_version,
                                        char **out_shadow_json);

// Merge a desired-state patch on behalf of a principal. `role` is one
// of `patient`, `family`, `practitioner`, `local_authority`,
// `operator`; desired writes always require the exact current version.
//
// # Safety
// `registry` must be a live handle; the strings must be NUL-terminated;
// `out_shadow_json` may be NULL.
enum EsStatus es_shadow_set_desired(struct EsShadowRegistry *registry,
                                    const char *device_id,
                                    const char *patch_json,
                                    const char *principal_id,
                                    const char *role,
                                    uint64_t expected_version,
                                    char **out_shadow_json);

// Read a shadow document as JSON.
//
// # Safety
// `registry` must be a live handle; `device_id` must be NUL-terminated;
// `out_shadow_json` must be valid.
enum EsStatus es_shadow_get(struct EsShadowRegistry *registry,
                            const char *device_id,
                            char **out_shadow_json);

// Mark a device offline; its shadow stays readable and writable.
//
// # Safety
// `registry` must be a live handle; `device_id` must be NUL-terminated.
enum EsStatus es_shadow_mark_offline(struct EsShadowRegistry *registry, const char *device_id);

// Bring a device back online and write the keys whose desired value
// differs from reported, as a JSON object (empty when in sync). The
// shadow version is not changed.
//
// # Safety
// `registry` must be a live handle; `device_id` must be NUL-terminated;
// `out_delta_json` must be valid.
enum EsStatus es_shadow_reconcile(struct EsShadowRegistry *registry,
                                  const char *device_id,
                                  char **out_delta_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EDGESIM_H */
