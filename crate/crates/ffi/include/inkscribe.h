#ifndef INKSCRIBE_H
#define INKSCRIBE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IscrStatus {
  ISCR_STATUS_OK = 0,
  ISCR_STATUS_NULL_POINTER = 1,
  ISCR_STATUS_INVALID_UTF8 = 2,
  ISCR_STATUS_INVALID_ARGUMENT = 3,
  ISCR_STATUS_IO = 4,
  /**
   * The project is not in a state that allows the operation.
   */
  ISCR_STATUS_PHASE_ORDER = 5,
  ISCR_STATUS_MISSING_TEXT = 6,
  ISCR_STATUS_UNKNOWN_BOX = 7,
  /**
   * Model or charset file is malformed or inconsistent.
   */
  ISCR_STATUS_MODEL = 8,
  /**
   * Label cannot be aligned to the available timesteps.
   */
  ISCR_STATUS_INFEASIBLE_LABEL = 9,
  ISCR_STATUS_BUFFER_TOO_SMALL = 10,
  /**
   * A Rust panic was caught at the boundary.
   */
  ISCR_STATUS_INTERNAL = 99,
} IscrStatus;

/**
 * An annotation project.
 */
typedef struct IscrProject IscrProject;

/**
 * A loaded recognition model with its character set.
 */
typedef struct IscrRecognizer IscrRecognizer;

/**
 * Rotated detection box; `angle` in radians.
 */
typedef struct IscrBox {
  double cx;
  double cy;
  double w;
  double h;
  double angle;
  double score;
} IscrBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. The pointer stays valid
 * until the next failing call on the same thread; do not free it.
 */
const char *iscr_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void iscr_string_free(char *s);

/**
 * Loads a model file. `charset_path` may be null for the built-in 79
 * character set.
 *
 * # Safety
 * Path arguments must be null or NUL-terminated strings; `out` must be
 * writable.
 */
enum IscrStatus iscr_recognizer_open(const char *model_path,
                                     const char *charset_path,
                                     struct IscrRecognizer **out);

/**
 * # Safety
 * `rec` must be null or a handle from [`iscr_recognizer_open`] not yet freed.
 */
void iscr_recognizer_free(struct IscrRecognizer *rec);

/**
 * Recognises one 8-bit grayscale word crop (row-major, `width * height`
 * bytes). `beam_width` 0 selects greedy decoding. On success `*out_text`
 * receives a string to release with [`iscr_string_free`].
 *
 * # Safety
 * `pixels` must hold `width * height` bytes; the out pointers must be
 * writable (`out_log_prob` may be null).
 */
enum IscrStatus iscr_recognizer_recognize_gray(const struct IscrRecognizer *rec,
                                               const uint8_t *pixels,
                                               uint32_t width,
                                               uint32_t height,
                                               uint32_t beam_width,
                                               char **out_text,
                                               double *out_log_prob);

/**
 * CTC negative log-likelihood of `labels` under row-major
 * `timesteps × classes` logits; the blank is the last class.
 *
 * # Safety
 * `logits` must hold `timesteps * classes` floats and `labels` `label_len`
 * entries (may be null when `label_len` is 0).
 */
enum IscrStatus iscr_ctc_loss(const float *logits,
                              size_t timesteps,
                              size_t classes,
                              const uint32_t *labels,
                              size_t label_len,
                              double *out_loss);

/**
 * Prefix beam search over row-major logits (blank last). Writes at most
 * `capacity` labels; `*out_len` always receives the full length, and
 * `BufferTooSmall` is returned when it exceeds `capacity`.
 *
 * # Safety
 * `logits` must hold `timesteps * classes` floats; `out_labels` must have
 * room for `capacity` entries; `out_len` must be writable.
 */
enum IscrStatus iscr_beam_decode(const float *logits,
                                 size_t timesteps,
                                 size_t classes,
                                 size_t beam_width,
                                 uint32_t *out_labels,
                                 size_t capacity,
                                 size_t *out_len,
                                 double *out_log_prob);

/**
 * Edit distance in Unicode scalar values.
 *
 * # Safety
 * `a` and `b` must be NUL-terminated UTF-8; `out` must be writable.
 */
enum IscrStatus iscr_levenshtein(const char *a, const char *b, size_t *out);

/**
 * Greedy non-maximum suppression. `out` needs room for `n` boxes; the kept
 * count goes to `*out_len`.
 *
 * # Safety
 * `boxes` must hold `n` entries (may be null when `n` is 0) and `out` room
 * for `n`.
 */
enum IscrStatus iscr_nms(const struct IscrBox *boxes,
                         size_t n,
                         double iou_threshold,
                         struct IscrBox *out,
                         size_t *out_len);

/**
 * Creates an empty project for a page of the given size.
 *
 * # Safety
 * `source` must be a NUL-terminated string; `out` must be writable.
 */
enum IscrStatus iscr_project_new(const char *source,
                                 uint32_t width,
                                 uint32_t height,
                                 struct IscrProject **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum IscrStatus iscr_project_load(const char *path, struct IscrProject **out);

/**
 * # Safety
 * `project` must be a live handle; `path` a NUL-terminated string.
 */
enum IscrStatus iscr_project_save(const struct IscrProject *project, const char *path);

/**
 * # Safety
 * `project` must be null or a handle not yet freed.
 */
void iscr_project_free(struct IscrProject *project);

/**
 * Number of boxes on the page.
 *
 * # Safety
 * `project` must be a live handle; `out` writable.
 */
enum IscrStatus iscr_project_box_count(const struct IscrProject *project, size_t *out);

/**
 * Workflow status as a static lowercase name ("detected" … "finalized").
 *
 * # Safety
 * `project` must be a live handle; `out` writable. The string is static.
 */
enum IscrStatus iscr_project_status(const struct IscrProject *project, const char **out);

/**
 * Adds an axis-aligned box; the new id goes to `*out_id`.
 *
 * # Safety
 * `project` must be a live handle; `out_id` writable.
 */
enum IscrStatus iscr_project_add_box(struct IscrProject *project,
                                     int64_t x,
                                     int64_t y,
                                     int64_t w,
                                     int64_t h,
                                     uint64_t *out_id);

/**
 * # Safety
 * `project` must be a live handle.
 */
enum IscrStatus iscr_project_delete_box(struct IscrProject *project, uint64_t id);

/**
 * # Safety
 * `project` must be a live handle.
 */
enum IscrStatus iscr_project_update_box(struct IscrProject *project,
                                        uint64_t id,
                                        int64_t x,
                                        int64_t y,
                                        int64_t w,
                                        int64_t h);

/**
 * Exchanges two boxes in the reading order.
 *
 * # Safety
 * `project` must be a live handle.
 */
enum IscrStatus iscr_project_swap(struct IscrProject *project, uint64_t a, uint64_t b);

/**
 * # Safety
 * `project` must be a live handle; `text` NUL-terminated UTF-8.
 */
enum IscrStatus iscr_project_set_text(struct IscrProject *project, uint64_t id, const char *text);

/**
 * Computes the reading order with default line clustering and writes the
 * ordered ids to `out_ids` (room for `capacity`). `*out_len` always gets
 * the box count; `BufferTooSmall` is returned when it exceeds `capacity`,
 * though the project is serialized either way.
 *
 * # Safety
 * `project` must be a live handle; `out_ids` must have room for `capacity`
 * ids; `out_len` writable.
 */
enum IscrStatus iscr_project_serialize(struct IscrProject *project,
                                       uint64_t *out_ids,
                                       size_t capacity,
                                       size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INKSCRIBE_H */
