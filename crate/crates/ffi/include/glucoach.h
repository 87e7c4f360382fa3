/* Generated by cbindgen; do not edit. */

#ifndef GLUCOACH_H
#define GLUCOACH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GcStatus {
  GC_STATUS_OK = 0,
  GC_STATUS_NULL_ARGUMENT = 1,
  GC_STATUS_INVALID_UTF8 = 2,
  GC_STATUS_INVALID_ARGUMENT = 3,
  GC_STATUS_REJECTED_READING = 4,
  GC_STATUS_DUPLICATE = 5,
  GC_STATUS_PARSE_ERROR = 6,
  GC_STATUS_PANIC = 99,
} GcStatus;

typedef enum GcContext {
  GC_CONTEXT_FASTING = 0,
  GC_CONTEXT_PRE_MEAL = 1,
  GC_CONTEXT_POST_MEAL = 2,
} GcContext;

typedef enum GcBand {
  GC_BAND_LOW = 0,
  GC_BAND_NORMAL = 1,
  GC_BAND_HIGH = 2,
  GC_BAND_ELEVATED = 3,
  GC_BAND_CRITICALLY_HIGH = 4,
} GcBand;

typedef enum GcPhase {
  GC_PHASE_PRE_EXERCISE = 0,
  GC_PHASE_POST_EXERCISE = 1,
} GcPhase;

typedef enum GcAction {
  GC_ACTION_BLOCK = 0,
  GC_ACTION_ALLOW_LIGHT = 1,
  GC_ACTION_ALLOW_MODERATE = 2,
  GC_ACTION_ALLOW_LIGHT_TO_MODERATE = 3,
  GC_ACTION_WARN_BLOCK = 4,
} GcAction;

/**
 * Opaque rule engine.
 */
typedef struct GcEngine GcEngine;

/**
 * Opaque append-only reward ledger.
 */
typedef struct GcLedger GcLedger;

/**
 * Output of [`gc_recommend`]. `message` is owned by the caller.
 */
typedef struct GcRecommendation {
  enum GcBand band;
  enum GcAction action;
  bool reward_promised;
  bool advises_hydration;
  bool advises_doctor;
  char *message;
} GcRecommendation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. Valid until the next call
 * on the same thread; never null.
 */
const char *gc_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 */
void gc_string_free(char *s);

/**
 * Engine with the bundled rule table and default band thresholds.
 */
struct GcEngine *gc_engine_new(void);

/**
 * Engine from a rule-table JSON document.
 */
enum GcStatus gc_engine_from_json(const char *json, struct GcEngine **out);

void gc_engine_free(struct GcEngine *engine);

enum GcStatus gc_classify(const struct GcEngine *engine,
                          int64_t value_mg_dl,
                          enum GcContext context,
                          enum GcBand *out);

/**
 * Recommendation for a reading. For `PostExercise`, `bg_mg_dl` is the
 * post-exercise reading and `bg_before`, `duration_min` and `kcal` describe
 * the session; they are ignored for `PreExercise`.
 */
enum GcStatus gc_recommend(const struct GcEngine *engine,
                           enum GcPhase phase,
                           enum GcContext context,
                           int64_t bg_mg_dl,
                           int64_t bg_before,
                           uint32_t duration_min,
                           double kcal,
                           struct GcRecommendation *out);

/**
 * Scores a JSON-lines scenario corpus. Percentages are written to the out-parameters.
 */
enum GcStatus gc_evaluate_corpus(const struct GcEngine *engine,
                                 const char *corpus_jsonl,
                                 double *proficiency_pct,
                                 double *efficiency_pct);

struct GcLedger *gc_ledger_new(void);

void gc_ledger_free(struct GcLedger *ledger);

/**
 * Appends an award. `reason` is `exercise_kcal`, `in_range_check` or
 * `area_goal:<area>`; `earned_at_unix` is seconds since the epoch.
 * Returns `Duplicate` when (user, reason, source_ref) was already awarded.
 */
enum GcStatus gc_ledger_append(struct GcLedger *ledger,
                               int64_t user_id,
                               int64_t earned_at_unix,
                               uint32_t points,
                               const char *reason,
                               const char *source_ref);

enum GcStatus gc_ledger_balance(const struct GcLedger *ledger, int64_t user_id, uint64_t *out);

/**
 * Number of entries in the ledger, across all users.
 */
size_t gc_ledger_len(const struct GcLedger *ledger);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GLUCOACH_H */
