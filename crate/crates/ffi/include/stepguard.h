#ifndef STEPGUARD_H
#define STEPGUARD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StgStatus {
  STG_STATUS_OK = 0,
  STG_STATUS_NULL_ARGUMENT = 1,
  STG_STATUS_INVALID_UTF8 = 2,
  STG_STATUS_INVALID_INPUT = 3,
  STG_STATUS_PRIVACY_VIOLATION = 4,
  STG_STATUS_IO = 5,
  STG_STATUS_PANIC = 6,
} StgStatus;

typedef enum StgConfig {
  STG_CONFIG_BASELINE = 0,
  STG_CONFIG_FEA = 1,
  STG_CONFIG_FEA_COM = 2,
} StgConfig;

typedef enum StgResultKind {
  STG_RESULT_KIND_FEASIBILITY = 0,
  STG_RESULT_KIND_COMPLETENESS = 1,
  STG_RESULT_KIND_LOCATE = 2,
} StgResultKind;

// Opaque placeholder memory.
typedef struct StgMemory StgMemory;

// Opaque parsed scenario.
typedef struct StgScenario StgScenario;

// Decoded structured reply. `bit` is meaningful for the two verdict
// kinds, `bbox` (x_min, y_min, x_max, y_max) for locate.
typedef struct StgStructuredResult {
  enum StgResultKind kind;
  uint8_t bit;
  uint32_t bbox[4];
} StgStructuredResult;

// Metrics from [`stg_compute_metrics`]. `has_positive` is 0 when no label
// is positive, in which case `average_precision` and `f1` are NaN.
typedef struct StgMetrics {
  double accuracy;
  double average_precision;
  double f1;
  uint8_t has_positive;
} StgMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. Valid
// until the next `stg_*` call on the same thread.
const char *stg_last_error(void);

// Release a string returned by this library. Null is a no-op.
//
// # Safety
// `s` must come from this library and not be freed twice.
void stg_string_free(char *s);

// Parse and validate a scenario from JSON.
//
// # Safety
// `json` must be a nul-terminated string; `out` must be writable.
enum StgStatus stg_scenario_from_json(const char *json, struct StgScenario **out);

// Number of bundled case-study scenarios.
size_t stg_bundled_count(void);

// Load bundled scenario `index` (0-based, in row order).
//
// # Safety
// `out` must be writable.
enum StgStatus stg_scenario_bundled(size_t index, struct StgScenario **out);

// # Safety
// `s` must come from this library and not be freed twice. Null is a no-op.
void stg_scenario_free(struct StgScenario *s);

// Replay a scenario with its scripted planner and oracle guards; writes
// the task report as JSON.
//
// # Safety
// `scenario` must be a live handle; `out_json` must be writable.
enum StgStatus stg_replay(const struct StgScenario *scenario,
                          enum StgConfig config,
                          char **out_json);

// Fresh memory that lives only in this process.
//
// # Safety
// `out` must be writable.
enum StgStatus stg_memory_new(struct StgMemory **out);

// Memory backed by a file, created on first write.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
enum StgStatus stg_memory_open(const char *path, struct StgMemory **out);

// # Safety
// `m` must come from this library and not be freed twice. Null is a no-op.
void stg_memory_free(struct StgMemory *m);

// Replace sensitive spans with placeholders, recording values in memory.
// `suffix_on_collision` nonzero renames clashing names instead of failing.
//
// # Safety
// `memory` must be a live handle not used concurrently from another
// thread; `instruction` nul-terminated; `out_text` writable.
enum StgStatus stg_redact(struct StgMemory *memory,
                          const char *instruction,
                          uint8_t suffix_on_collision,
                          char **out_text);

// Substitute known placeholders back into a command. Unknown ones are
// left in place and counted in `out_unknown` when non-null.
//
// # Safety
// `memory` must be a live handle; `command` nul-terminated; `out_text`
// writable; `out_unknown` null or writable.
enum StgStatus stg_restore(const struct StgMemory *memory,
                           const char *command,
                           char **out_text,
                           size_t *out_unknown);

// Decode a structured model reply.
//
// # Safety
// `bytes` must point to `len` readable bytes; `out` must be writable.
enum StgStatus stg_codec_parse(const uint8_t *bytes, size_t len, struct StgStructuredResult *out);

// Accuracy, average precision and F1 over `n` (score, label) pairs.
//
// # Safety
// `scores` and `labels` must each point to `n` readable elements; `out`
// must be writable.
enum StgStatus stg_compute_metrics(const double *scores,
                                   const uint8_t *labels,
                                   size_t n,
                                   struct StgMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEPGUARD_H */
