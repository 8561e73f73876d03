#ifndef IEF_H
#define IEF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IefStatus {
  IEF_STATUS_OK = 0,
  IEF_STATUS_NULL_POINTER = 1,
  IEF_STATUS_INVALID_ARGUMENT = 2,
  IEF_STATUS_DIMENSION_MISMATCH = 3,
  IEF_STATUS_IO = 4,
  IEF_STATUS_DATA = 5,
  IEF_STATUS_DIVERGENCE = 6,
  IEF_STATUS_BUFFER_TOO_SMALL = 7,
  IEF_STATUS_PANIC = 8,
} IefStatus;

/**
 * A trained model. Create with [`ief_model_load`], release with
 * [`ief_model_free`].
 */
typedef struct IefModel IefModel;

/**
 * Shapes a caller needs to size buffers for a model.
 */
typedef struct IefModelInfo {
  size_t width;
  size_t height;
  size_t image_channels;
  size_t keypoints;
  size_t test_steps;
} IefModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to fit) and returns the full message length in
 * bytes, excluding the terminator. Pass a null `buf` to query the length.
 *
 * # Safety
 * `buf` must be null or valid for `len` writes.
 */
size_t ief_last_error_message(char *buf, size_t len);

/**
 * Loads the model saved in directory `path` into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for one write.
 */
enum IefStatus ief_model_load(const char *path, struct IefModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from [`ief_model_load`] not yet freed.
 */
void ief_model_free(struct IefModel *model);

/**
 * # Safety
 * `model` must be a live handle and `info` valid for one write.
 */
enum IefStatus ief_model_info(const struct IefModel *model, struct IefModelInfo *info);

/**
 * Writes the model's starting pose for an image whose given keypoints sit
 * at `given_xy` (one point per given keypoint, in the model's order) into
 * `out_xy` (`2 * keypoints` doubles).
 *
 * # Safety
 * `given_xy` must be valid for `given_len` reads and `out_xy` for
 * `out_len` writes.
 */
enum IefStatus ief_model_initial_pose(const struct IefModel *model,
                                      const double *given_xy,
                                      size_t given_len,
                                      double *out_xy,
                                      size_t out_len);

/**
 * Runs `steps` feedback iterations on a `channels x height x width`
 * row-major image from `initial_xy`, writing all `steps + 1` poses to
 * `out_xy` (`2 * keypoints * (steps + 1)` doubles).
 *
 * # Safety
 * Each pointer must be valid for its stated length.
 */
enum IefStatus ief_model_infer(const struct IefModel *model,
                               const float *image,
                               size_t image_len,
                               const double *initial_xy,
                               size_t initial_len,
                               size_t steps,
                               double *out_xy,
                               size_t out_len);

/**
 * Bounded correction from `current_xy` toward `target_xy` for `keypoints`
 * points, written to `out_xy`.
 *
 * # Safety
 * Each pointer must be valid for `2 * keypoints` elements.
 */
enum IefStatus ief_bounded_correction(const double *target_xy,
                                      const double *current_xy,
                                      size_t keypoints,
                                      double bound,
                                      double *out_xy);

/**
 * Peak-normalized Gaussian heatmap of one keypoint, row-major into `out`
 * (`width * height` floats).
 *
 * # Safety
 * `out` must be valid for `out_len` writes.
 */
enum IefStatus ief_render_heatmap(double x,
                                  double y,
                                  size_t width,
                                  size_t height,
                                  double sigma,
                                  float *out,
                                  size_t out_len);

/**
 * PCKh per keypoint: `out[k]` is 1 when correct, 0 when wrong, and -1 when
 * `annotated[k]` is 0 and the keypoint is not scored.
 *
 * # Safety
 * `predicted_xy` and `truth_xy` must be valid for `2 * keypoints` reads,
 * `annotated` for `keypoints` reads (or null for all annotated), and `out`
 * for `keypoints` writes.
 */
enum IefStatus ief_pckh(const double *predicted_xy,
                        const double *truth_xy,
                        const uint8_t *annotated,
                        size_t keypoints,
                        double reference_length,
                        double alpha,
                        int32_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IEF_H */
