#ifndef PYROWATCH_H
#define PYROWATCH_H

/* Generated from the Rust sources; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible entry point.
 */
typedef enum PwStatus {
  /**
   * The call succeeded.
   */
  PW_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  PW_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  PW_STATUS_INVALID_UTF8 = 2,
  /**
   * The configuration text was rejected; see `pw_last_error`.
   */
  PW_STATUS_INVALID_CONFIG = 3,
  /**
   * Width or height is zero, or the buffer size overflows.
   */
  PW_STATUS_BAD_DIMENSIONS = 4,
  /**
   * Frame analysis failed (e.g. dimensions changed mid-stream).
   */
  PW_STATUS_DETECT_FAILED = 5,
  /**
   * An unexpected internal failure was caught at the boundary.
   */
  PW_STATUS_INTERNAL = 6,
} PwStatus;

/**
 * Opaque detection engine. Create with [`pw_engine_new`], feed frames in
 * order with [`pw_engine_process_frame`], destroy with [`pw_engine_free`].
 */
typedef struct PwEngine PwEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failing call on this thread. Never null;
 * empty before any failure. Valid until the next failing call here.
 */
const char *pw_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pw_version(void);

/**
 * Create an engine. `config` is either null (defaults) or NUL-terminated
 * `key = value` lines using the detection keys of the pipeline config
 * format (`diff_threshold`, `erode_w`, `hue_lo`, `connectivity`,
 * `hough_theta_bins`, `severity_watch_pct`, ...). Unknown keys are
 * rejected. On success `*out` owns the engine.
 *
 * # Safety
 * `config` must be null or point to a NUL-terminated string; `out` must
 * be a valid pointer to writable storage.
 */
enum PwStatus pw_engine_new(const char *config, struct PwEngine **out);

/**
 * Analyze the next frame. `rgb` points to `width * height * 3` bytes of
 * row-major 8-bit RGB. The first frame primes the detector and reports no
 * flows. If `out_json` is non-null it receives a JSON report (flows,
 * trajectories, and the alert event if one fired) to release with
 * [`pw_string_free`].
 *
 * Returns `DETECT_FAILED` when the frame is incompatible with the previous
 * one; the engine keeps its prior state and stays usable.
 *
 * # Safety
 * `engine` must come from [`pw_engine_new`] and not be used concurrently;
 * `rgb` must point to at least `width * height * 3` readable bytes;
 * `out_json` must be null or valid writable storage.
 */
enum PwStatus pw_engine_process_frame(struct PwEngine *engine,
                                      const uint8_t *rgb,
                                      uint32_t width,
                                      uint32_t height,
                                      uint64_t frame_id,
                                      uint64_t timestamp_ms,
                                      char **out_json);

/**
 * One-shot analysis of a frame pair with default parameters: primes on
 * `prev_rgb`, analyzes `curr_rgb`, and returns the second frame's JSON
 * report through `out_json` (mandatory here). Both buffers are
 * `width * height * 3` bytes of row-major RGB.
 *
 * # Safety
 * Both buffers must be readable for their full size; `out_json` must be
 * valid writable storage.
 */
enum PwStatus pw_detect_once(const uint8_t *prev_rgb,
                             const uint8_t *curr_rgb,
                             uint32_t width,
                             uint32_t height,
                             char **out_json);

/**
 * Destroy an engine. Null is a no-op. The handle must not be used again.
 *
 * # Safety
 * `engine` must be null or a pointer obtained from [`pw_engine_new`] that
 * has not been freed yet.
 */
void pw_engine_free(struct PwEngine *engine);

/**
 * Release a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must be null or a pointer returned through an `out_json` argument
 * that has not been freed yet.
 */
void pw_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PYROWATCH_H */
