#ifndef RDIV_H
#define RDIV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RdivStatus {
  RDIV_STATUS_OK = 0,
  RDIV_STATUS_NULL_POINTER = 1,
  RDIV_STATUS_INVALID_ARGUMENT = 2,
  RDIV_STATUS_IO = 3,
  RDIV_STATUS_CORRUPT_CHECKPOINT = 4,
  RDIV_STATUS_MODEL = 5,
  RDIV_STATUS_BUFFER_TOO_SMALL = 6,
  RDIV_STATUS_PANIC = 7,
} RdivStatus;

/**
 * Opaque trained detector.
 */
typedef struct RdivModel RdivModel;

/**
 * Axis-aligned box in image fractions: centre plus width and height.
 */
typedef struct RdivBox {
  double cx;
  double cy;
  double w;
  double h;
} RdivBox;

typedef struct RdivDetection {
  struct RdivBox bbox;
  double confidence;
  /**
   * Severity: 0 low, 1 middle, 2 high.
   */
  uint32_t category;
} RdivDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `capacity` bytes. Returns the full message length without
 * the terminator.
 *
 * # Safety
 * `buffer` must be null or point to `capacity` writable bytes.
 */
size_t rdiv_last_error_message(char *buffer, size_t capacity);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rdiv_version(void);

/**
 * Loads a checkpoint file into a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum RdivStatus rdiv_model_load(const char *path, struct RdivModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from [`rdiv_model_load`] not yet freed.
 */
void rdiv_model_free(struct RdivModel *model);

/**
 * Side length in pixels of the square images the model expects.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum RdivStatus rdiv_model_input_size(const struct RdivModel *model, size_t *out);

/**
 * Runs the detector on one image and writes up to `capacity` detections.
 *
 * `pixels` holds `3 · N · N` values in `[0, 1]`, channel-major (all red,
 * then green, then blue), rows top to bottom. `out_count` receives the
 * number of detections; if it exceeds `capacity` nothing is written and
 * `BufferTooSmall` is returned, so a caller can retry with a larger buffer.
 *
 * # Safety
 * `pixels` must point to `len` readable values; `out_dets` to `capacity`
 * writable records (may be null when `capacity` is 0); `out_count` must be
 * writable.
 */
enum RdivStatus rdiv_model_detect(const struct RdivModel *model,
                                  const double *pixels,
                                  size_t len,
                                  double conf_threshold,
                                  double nms_threshold,
                                  struct RdivDetection *out_dets,
                                  size_t capacity,
                                  size_t *out_count);

/**
 * Intersection over union of two boxes.
 *
 * # Safety
 * `a`, `b` must be readable and `out` writable.
 */
enum RdivStatus rdiv_iou(const struct RdivBox *a, const struct RdivBox *b, double *out);

/**
 * Ground position of a box centre seen by a nadir camera at
 * `(lat, lon, alt_m)` with horizontal field of view `fov_deg` and an image
 * of `width_px × height_px` pixels.
 *
 * # Safety
 * `bbox` must be readable; `out_lat` and `out_lon` writable.
 */
enum RdivStatus rdiv_geolocate(const struct RdivBox *bbox,
                               double lat,
                               double lon,
                               double alt_m,
                               double fov_deg,
                               uint32_t width_px,
                               uint32_t height_px,
                               double *out_lat,
                               double *out_lon);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RDIV_H */
