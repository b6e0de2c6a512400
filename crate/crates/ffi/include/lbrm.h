#ifndef LBRM_H
#define LBRM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum LbrmStatus {
  LBRM_STATUS_OK = 0,
  LBRM_STATUS_NULL_POINTER = 1,
  LBRM_STATUS_INVALID_ARGUMENT = 2,
  LBRM_STATUS_SHAPE = 3,
  LBRM_STATUS_RANGE = 4,
  LBRM_STATUS_IO = 5,
  LBRM_STATUS_PARSE = 6,
  LBRM_STATUS_DIVERGENCE = 7,
  LBRM_STATUS_PARITY = 8,
  LBRM_STATUS_PANIC = 9,
} LbrmStatus;

/**
 * Opaque trained imputer.
 */
typedef struct LbrmModel LbrmModel;

/**
 * Mask placement and repetition for [`lbrm_score_series`].
 */
typedef struct LbrmAttackParams {
  size_t block_len;
  size_t repeats;
  /**
   * 0 = evenly spread blocks, 1 = random blocks.
   */
  uint8_t random_placement;
  uint64_t seed;
} LbrmAttackParams;

/**
 * One candidate's losses and ratio.
 */
typedef struct LbrmScore {
  double l_t;
  double l_r;
  double r;
  /**
   * Nonzero when both losses were below the ratio floor and `r` was set to 1.
   */
  uint8_t degenerate;
} LbrmScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `buf_len - 1` bytes). Returns the full message length in
 * bytes, excluding the terminator. `buf` may be null to query the length.
 *
 * # Safety
 * `buf` must be null or point to `buf_len` writable bytes.
 */
size_t lbrm_last_error_message(char *buf, size_t buf_len);

/**
 * Load a model file written by `lbrm train`. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
 */
enum LbrmStatus lbrm_model_load(const char *path, struct LbrmModel **out);

/**
 * Release a handle from [`lbrm_model_load`]. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void lbrm_model_free(struct LbrmModel *model);

/**
 * Series length and dimension count the model was trained for.
 *
 * # Safety
 * All pointers must be valid.
 */
enum LbrmStatus lbrm_model_shape(const struct LbrmModel *model, size_t *len, size_t *dims);

/**
 * Impute the entries whose `observed` byte is zero. Observed entries are
 * copied through unchanged. `out` receives `len * dims` values.
 *
 * # Safety
 * Buffers must hold `len * dims` elements; `model` must be a live handle.
 */
enum LbrmStatus lbrm_model_impute(const struct LbrmModel *model,
                                  const double *values,
                                  const uint8_t *observed,
                                  size_t len,
                                  size_t dims,
                                  double *out);

/**
 * DTW distance between two series with the same `dims`. `band` < 0 means
 * no band; otherwise a Sakoe-Chiba radius (widened to the length difference).
 *
 * # Safety
 * `a` holds `a_len * dims` values, `b` holds `b_len * dims`, `out` is valid.
 */
enum LbrmStatus lbrm_dtw_distance(const double *a,
                                  size_t a_len,
                                  const double *b,
                                  size_t b_len,
                                  size_t dims,
                                  int64_t band,
                                  double *out);

/**
 * Score one candidate series against a target and a reference model.
 *
 * # Safety
 * `values` holds `len * dims` elements; handles and `params`/`out` are valid.
 */
enum LbrmStatus lbrm_score_series(const struct LbrmModel *target,
                                  const struct LbrmModel *reference,
                                  const double *values,
                                  size_t len,
                                  size_t dims,
                                  const struct LbrmAttackParams *params,
                                  struct LbrmScore *out);

/**
 * Area under the ROC curve of `n` scores with member flags (nonzero = member).
 * `lower_is_member` selects the score direction (nonzero for LBRM ratios).
 *
 * # Safety
 * `scores` and `members` hold `n` elements; `out` is valid.
 */
enum LbrmStatus lbrm_auroc(const double *scores,
                           const uint8_t *members,
                           size_t n,
                           uint8_t lower_is_member,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LBRM_H */
