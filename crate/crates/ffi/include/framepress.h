/* framepress: streaming KV-cache engine with persistent attention sinks. */

#ifndef FRAMEPRESS_H
#define FRAMEPRESS_H

/* Generated by cbindgen from framepress-ffi. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum FpStatus {
  /**
   * Success.
   */
  FP_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  FP_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  FP_STATUS_INVALID_UTF8 = 2,
  /**
   * Rejected configuration (bad JSON, unknown field, invalid budget).
   */
  FP_STATUS_CONFIG = 3,
  /**
   * The engine refused the operation at runtime.
   */
  FP_STATUS_RUNTIME = 4,
  /**
   * An internal invariant failed; the engine may be inconsistent.
   */
  FP_STATUS_PANIC = 5,
} FpStatus;

/**
 * Opaque engine handle: the caches of one model under one policy.
 */
typedef struct FpEngine FpEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; never freed.
 */
const char *fp_version(void);

/**
 * Message of the current thread's most recent failure, or an empty string.
 * The pointer stays valid until this thread's next call into the library;
 * do not free it.
 */
const char *fp_last_error(void);

/**
 * Releases a string returned by this library. NULL is a no-op.
 *
 * # Safety
 * `text` must be a pointer previously returned through an out-parameter of
 * this library, and must not be used afterwards.
 */
void fp_string_free(char *text);

/**
 * Creates an engine from a JSON config:
 * `{"cache": {...}, "num_layers": L, "num_heads": H, "head_dim": D,
 *   "rope_base": B, "seed": S}` — all keys optional.
 * On success writes the handle to `out_engine`.
 *
 * # Safety
 * `config_json` must be NULL or NUL-terminated; `out_engine` must point to
 * writable memory. The handle must be released with [`fp_engine_free`].
 */
enum FpStatus fp_engine_new(const char *config_json, struct FpEngine **out_engine);

/**
 * Releases an engine handle. NULL is a no-op.
 *
 * # Safety
 * `engine` must come from [`fp_engine_new`] and must not be used afterwards.
 */
void fp_engine_free(struct FpEngine *engine);

/**
 * Number of independent caches the engine maintains (layers, or
 * layers x heads under per-head selection).
 *
 * # Safety
 * `engine` must be a live handle; `out_count` must be writable.
 */
enum FpStatus fp_engine_cache_count(const struct FpEngine *engine, size_t *out_count);

/**
 * Tokens currently held by each cache.
 *
 * # Safety
 * `engine` must be a live handle; `out_tokens` must be writable.
 */
enum FpStatus fp_engine_token_count(const struct FpEngine *engine, size_t *out_tokens);

/**
 * Frame-equivalents currently held (token count divided by frame size,
 * rounded up).
 *
 * # Safety
 * `engine` must be a live handle; `out_frames` must be writable.
 */
enum FpStatus fp_engine_frame_count(const struct FpEngine *engine, size_t *out_frames);

/**
 * True once the window has filled to the compression trigger.
 *
 * # Safety
 * `engine` must be a live handle; `out_due` must be writable.
 */
enum FpStatus fp_engine_trigger_due(const struct FpEngine *engine, bool *out_due);

/**
 * Appends one chunk to every cache of `layer`.
 *
 * `keys`, `values` and `queries` each hold `rows * num_heads * head_dim`
 * floats, row-major; `positions` holds `rows * 3` unsigned ints as
 * `(frame, h, w)` triples. Keys and queries arrive raw and are
 * position-embedded inside; values pass through untouched. Chunks must
 * continue the frame timeline, and every layer must receive the same chunk
 * before the next one starts.
 *
 * # Safety
 * `engine` must be a live handle and the four arrays must be readable at
 * the lengths above.
 */
enum FpStatus fp_engine_append_chunk(struct FpEngine *engine,
                                     size_t layer,
                                     size_t rows,
                                     const float *keys,
                                     const float *values,
                                     const float *queries,
                                     const uint32_t *positions);

/**
 * Runs the configured compression policy on every cache of `layer`, if the
 * window has reached its trigger. `denoise_queries` may be NULL when
 * `denoise_rows` is 0; otherwise it holds `denoise_rows * num_heads *
 * head_dim` raw floats that are position-embedded against the cache's next
 * frames before scoring.
 *
 * When `out_reports_json` is non-NULL it receives a JSON array with one
 * entry per cache of the layer: a report object, or `null` when the window
 * was still below the trigger. Free it with [`fp_string_free`].
 *
 * # Safety
 * `engine` must be a live handle; buffers must be readable at the stated
 * lengths; `out_reports_json`, when non-NULL, must be writable.
 */
enum FpStatus fp_engine_compress(struct FpEngine *engine,
                                 size_t layer,
                                 const float *denoise_queries,
                                 size_t denoise_rows,
                                 char **out_reports_json);

/**
 * Serializes the engine's full state (policy config plus every cache) to
 * JSON. Free the string with [`fp_string_free`].
 *
 * # Safety
 * `engine` must be a live handle; `out_json` must be writable.
 */
enum FpStatus fp_engine_export_json(const struct FpEngine *engine, char **out_json);

/**
 * Runs one synthetic rollout per seed and writes a JSON array of
 * `{"seed": ..., "summary": {...}}` rows to `out_summary_json`. The config
 * follows the CLI's format: `{"model": {...}, "cache": {...}, "chunks": N,
 * "seeds": [...], "oracle": bool}`, all keys optional. Free the result
 * with [`fp_string_free`].
 *
 * # Safety
 * `config_json` must be NULL or NUL-terminated; `out_summary_json` must be
 * writable.
 */
enum FpStatus fp_simulate(const char *config_json, char **out_summary_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRAMEPRESS_H */
