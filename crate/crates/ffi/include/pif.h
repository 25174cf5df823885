#ifndef PIF_H
#define PIF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum PifStatus {
  PIF_STATUS_OK = 0,
  // A required pointer argument was NULL.
  PIF_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  PIF_STATUS_INVALID_UTF8 = 2,
  // The story has errors; the message lists them with line numbers.
  PIF_STATUS_PARSE_ERROR = 3,
  // The engine refused a reader action (debounce, bad choice index).
  PIF_STATUS_REJECTED = 4,
  PIF_STATUS_IO = 5,
  // The model file is unreadable or does not match what was asked of it.
  PIF_STATUS_MODEL = 6,
  // An argument was out of range or inconsistent.
  PIF_STATUS_INVALID_ARGUMENT = 7,
  PIF_STATUS_NOT_FOUND = 8,
  // A bug inside the library; the handle involved should be freed.
  PIF_STATUS_INTERNAL = 99,
} PifStatus;

// A reading engine over one story, fed by a single state stream whose channels
// are the keys given at creation.
typedef struct PifEngine PifEngine;

// A trained classifier.
typedef struct PifModel PifModel;

// A parsed story.
typedef struct PifStory PifStory;

// Classification of one feature vector.
typedef struct PifPrediction {
  // True for the model's first class (see [`pif_model_class_label`]).
  bool is_class_a;
  // Discriminant score; class A at 0 and above.
  double score;
  double posterior_a;
} PifPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, static storage.
const char *pif_version(void);

// Message of the last failed call on this thread, or NULL if none failed yet.
// Valid until the next failing call on this thread.
const char *pif_last_error(void);

// Release a string returned by this library. NULL is ignored.
//
// # Safety
// `s` is NULL or came from this library and has not been freed.
void pif_string_free(char *s);

// Parse story markup held in memory.
//
// # Safety
// `source` is a NUL-terminated string; `out` is valid for a pointer write.
enum PifStatus pif_story_parse(const char *source, struct PifStory **out);

// Read and parse a story file.
//
// # Safety
// `path` is a NUL-terminated string; `out` is valid for a pointer write.
enum PifStatus pif_story_load(const char *path, struct PifStory **out);

// Lint findings as a JSON array of `{severity, line, col, message}`.
//
// # Safety
// `story` is a live handle; `out_json` is valid for a pointer write.
enum PifStatus pif_story_lint(const struct PifStory *story, char **out_json);

// # Safety
// `story` is NULL or a handle not yet freed.
void pif_story_free(struct PifStory *story);

// Start a reading engine at time `t0` (seconds, caller's clock). The story is
// copied; the story handle may be freed afterwards. `state_keys` name the values
// passed to [`pif_engine_push_state`], e.g. `"arousal"` feeds `phys_arousal` and
// the tag-scoped `phys_<tag>_arousal`.
//
// # Safety
// `story` is a live handle; `state_keys` points to `n_keys` NUL-terminated strings;
// `out` is valid for a pointer write.
enum PifStatus pif_engine_new(const struct PifStory *story,
                              const char *const *state_keys,
                              size_t n_keys,
                              double debounce_s,
                              double t0,
                              struct PifEngine **out);

// # Safety
// `engine` is NULL or a handle not yet freed.
void pif_engine_free(struct PifEngine *engine);

// Feed one state sample: `values[i]` for the i-th key given at creation.
// `changed` (nullable) receives whether any `phys_*` variable was written.
//
// # Safety
// `engine` is a live handle; `values` points to `n` doubles; `changed` is NULL or
// valid for a write.
enum PifStatus pif_engine_push_state(struct PifEngine *engine,
                                     double t,
                                     const double *values,
                                     size_t n,
                                     bool *changed);

// Turn the page at time `t`.
//
// # Safety
// `engine` is a live handle.
enum PifStatus pif_engine_advance(struct PifEngine *engine, double t);

// Take displayed choice `index` (0-based) at time `t`.
//
// # Safety
// `engine` is a live handle.
enum PifStatus pif_engine_choose(struct PifEngine *engine, double t, size_t index);

// The current page as the JSON `page` message of the reader protocol.
//
// # Safety
// `engine` is a live handle; `out_json` is valid for a pointer write.
enum PifStatus pif_engine_page(const struct PifEngine *engine, char **out_json);

// Value of a story variable as the story sees it; booleans read as 0 or 1.
//
// # Safety
// `engine` is a live handle; `name` is a NUL-terminated string; `out` is valid for a write.
enum PifStatus pif_engine_variable(const struct PifEngine *engine, const char *name, double *out);

// True once the story has ended; false for NULL.
//
// # Safety
// `engine` is NULL or a live handle.
bool pif_engine_finished(const struct PifEngine *engine);

// Markers emitted since the last call, as a JSON array of `{"t": s, "label": "TAG_START:X"}`.
//
// # Safety
// `engine` is a live handle; `out_json` is valid for a pointer write.
enum PifStatus pif_engine_take_markers(struct PifEngine *engine, char **out_json);

// Load a model written by `pif train`. `construct` (nullable) must match the
// construct it was trained for.
//
// # Safety
// `path` is a NUL-terminated string, `construct` NULL or one; `out` is valid for a
// pointer write.
enum PifStatus pif_model_load(const char *path, const char *construct, struct PifModel **out);

// # Safety
// `model` is NULL or a handle not yet freed.
void pif_model_free(struct PifModel *model);

// Number of features the model expects; 0 for NULL.
//
// # Safety
// `model` is NULL or a live handle.
size_t pif_model_feature_count(const struct PifModel *model);

// Name of feature `i`, owned by the model; NULL when out of range.
//
// # Safety
// `model` is NULL or a live handle.
const char *pif_model_feature_name(const struct PifModel *model, size_t i);

// Label of class A (`is_class_a`) or B, owned by the model; NULL for NULL.
//
// # Safety
// `model` is NULL or a live handle.
const char *pif_model_class_label(const struct PifModel *model, bool is_class_a);

// Classify one window's features, in the order of [`pif_model_feature_name`],
// ranked against the model's training population. NaN marks a missing value.
//
// # Safety
// `model` is a live handle; `values` points to `n` doubles; `out` is valid for a write.
enum PifStatus pif_model_classify(const struct PifModel *model,
                                  const double *values,
                                  size_t n,
                                  struct PifPrediction *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIF_H */
