#ifndef COGMAP_H
#define COGMAP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by all functions.
 */
typedef enum CogmapStatus {
  COGMAP_STATUS_OK = 0,
  COGMAP_STATUS_NULL_ARGUMENT = 1,
  COGMAP_STATUS_INVALID_UTF8 = 2,
  /**
   * The output directory lacks a stage the call needs.
   */
  COGMAP_STATUS_MISSING_ARTIFACT = 3,
  COGMAP_STATUS_IO = 4,
  /**
   * A query did not parse or named no known term.
   */
  COGMAP_STATUS_INVALID_QUERY = 5,
  COGMAP_STATUS_UNKNOWN_TERM = 6,
  /**
   * A term of the wrong kind, or a construct with no tasks.
   */
  COGMAP_STATUS_INVALID_ARGUMENT = 7,
  COGMAP_STATUS_INTERNAL = 8,
  COGMAP_STATUS_PANIC = 9,
} CogmapStatus;

/**
 * Loaded artifacts. Opaque to C; safe to share across threads for reads.
 */
typedef struct CogmapEngine CogmapEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next library call on the same thread.
 */
const char *cogmap_last_error(void);

/**
 * Library version as a static string.
 */
const char *cogmap_version(void);

/**
 * Loads the artifacts in `output_dir` into a new engine.
 *
 * # Safety
 * `output_dir` must be a nul-terminated string and `out` a valid pointer.
 */
enum CogmapStatus cogmap_engine_open(const char *output_dir, struct CogmapEngine **out);

/**
 * Releases an engine. Null is ignored.
 *
 * # Safety
 * `engine` must come from [`cogmap_engine_open`] and not be used afterwards.
 */
void cogmap_engine_free(struct CogmapEngine *engine);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void cogmap_string_free(char *s);

/**
 * Ranks tasks for a query such as `"attention + memory - inhibition"`.
 * Writes `{"query": ..., "results": [{"term": ..., "score": ...}]}`.
 *
 * # Safety
 * Pointers must be valid; `text` nul-terminated. Free `*out_json` with
 * [`cogmap_string_free`].
 */
enum CogmapStatus cogmap_query(const struct CogmapEngine *engine,
                               const char *text,
                               size_t top_k,
                               char **out_json);

/**
 * Builds a task battery covering `n` constructs given by id or name.
 * Writes `{"constructs", "tasks", "edges", "total_distance"}` as JSON.
 *
 * # Safety
 * `constructs` must point to `n` nul-terminated strings. Free `*out_json`
 * with [`cogmap_string_free`].
 */
enum CogmapStatus cogmap_battery(const struct CogmapEngine *engine,
                                 const char *const *constructs,
                                 size_t n,
                                 char **out_json);

/**
 * Jensen-Shannon divergence between two terms, in bits.
 *
 * # Safety
 * Pointers must be valid; strings nul-terminated.
 */
enum CogmapStatus cogmap_task_distance(const struct CogmapEngine *engine,
                                       const char *a,
                                       const char *b,
                                       double *out);

/**
 * Jaccard overlap of two constructs' hyperedges.
 *
 * # Safety
 * Pointers must be valid; strings nul-terminated.
 */
enum CogmapStatus cogmap_hypernomy(const struct CogmapEngine *engine,
                                   const char *c1,
                                   const char *c2,
                                   double *out);

/**
 * Number of hyperedges containing a task.
 *
 * # Safety
 * Pointers must be valid; `task` nul-terminated.
 */
enum CogmapStatus cogmap_task_impurity(const struct CogmapEngine *engine,
                                       const char *task,
                                       size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COGMAP_H */
