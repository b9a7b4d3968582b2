#ifndef DV3_H
#define DV3_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes. Zero is success.
 */
typedef enum Dv3Status {
  DV3_STATUS_OK = 0,
  DV3_STATUS_NULL_POINTER = 1,
  DV3_STATUS_INVALID_ARGUMENT = 2,
  DV3_STATUS_IO = 3,
  DV3_STATUS_FORMAT = 4,
  /**
   * The input holds no usable data, e.g. an empty proposal region.
   */
  DV3_STATUS_DATA = 5,
  DV3_STATUS_BUFFER_TOO_SMALL = 6,
  DV3_STATUS_PANIC = 7,
} Dv3Status;

/**
 * Motion and appearance point sets extracted from one clip.
 */
typedef struct Dv3Extraction Dv3Extraction;

/**
 * A trained classifier.
 */
typedef struct Dv3Model Dv3Model;

/**
 * A normalized point set with per-point motion channels.
 */
typedef struct Dv3PointSet Dv3PointSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *dv3_version(void);

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *dv3_last_error(void);

/**
 * Writes the `frames` approximate rank pooling coefficients into `out`.
 *
 * # Safety
 * `out` must point to at least `len` writable doubles.
 */
enum Dv3Status dv3_approx_coeffs(size_t frames, double *out, size_t len);

/**
 * Reads a DV3P point set file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum Dv3Status dv3_pointset_read(const char *path, struct Dv3PointSet **out);

/**
 * Writes a point set to a DV3P file.
 *
 * # Safety
 * `ps` must come from this library; `path` must be nul-terminated.
 */
enum Dv3Status dv3_pointset_write(const struct Dv3PointSet *ps, const char *path);

/**
 * Number of points; 0 for a null handle.
 *
 * # Safety
 * `ps` must be null or come from this library.
 */
size_t dv3_pointset_len(const struct Dv3PointSet *ps);

/**
 * Motion channels per point; 0 for a null handle.
 *
 * # Safety
 * `ps` must be null or come from this library.
 */
size_t dv3_pointset_channels(const struct Dv3PointSet *ps);

/**
 * Copies `len × 3` coordinates and `len × channels` motion values,
 * row-major. Either buffer may be null to skip it.
 *
 * # Safety
 * Non-null buffers must hold the stated number of writable doubles.
 */
enum Dv3Status dv3_pointset_copy(const struct Dv3PointSet *ps,
                                 double *coords,
                                 size_t coords_len,
                                 double *motion,
                                 size_t motion_len);

/**
 * # Safety
 * `ps` must be null or come from this library and not be used afterwards.
 */
void dv3_pointset_free(struct Dv3PointSet *ps);

/**
 * Runs the extraction pipeline on a depth clip (`.d16` file or PNG
 * directory). `bbox_path` and `config_path` may be null.
 *
 * # Safety
 * Paths must be null or nul-terminated; `out` must be writable.
 */
enum Dv3Status dv3_extract(const char *clip_path,
                           const char *bbox_path,
                           const char *config_path,
                           struct Dv3Extraction **out);

/**
 * Motion point set owned by the extraction; valid until it is freed.
 *
 * # Safety
 * `ex` must be null or come from this library.
 */
const struct Dv3PointSet *dv3_extraction_motion(const struct Dv3Extraction *ex);

/**
 * Number of appearance point sets.
 *
 * # Safety
 * `ex` must be null or come from this library.
 */
size_t dv3_extraction_appearance_count(const struct Dv3Extraction *ex);

/**
 * Appearance point set `index`, or null when out of range.
 *
 * # Safety
 * `ex` must be null or come from this library.
 */
const struct Dv3PointSet *dv3_extraction_appearance(const struct Dv3Extraction *ex, size_t index);

/**
 * # Safety
 * `ex` must be null or come from this library and not be used afterwards.
 */
void dv3_extraction_free(struct Dv3Extraction *ex);

/**
 * Loads a DV3M checkpoint.
 *
 * # Safety
 * `path` must be nul-terminated; `out` must be writable.
 */
enum Dv3Status dv3_model_load(const char *path, struct Dv3Model **out);

/**
 * Number of classes; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
size_t dv3_model_classes(const struct Dv3Model *model);

/**
 * Classifies an extraction. Writes the class index to `class_out` and,
 * when `probs` is non-null, the class probabilities.
 *
 * # Safety
 * Handles must come from this library; `class_out` must be writable;
 * a non-null `probs` must hold `probs_len` floats.
 */
enum Dv3Status dv3_model_predict(const struct Dv3Model *model,
                                 const struct Dv3Extraction *ex,
                                 size_t *class_out,
                                 float *probs,
                                 size_t probs_len);

/**
 * # Safety
 * `model` must be null or come from this library and not be used afterwards.
 */
void dv3_model_free(struct Dv3Model *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DV3_H */
