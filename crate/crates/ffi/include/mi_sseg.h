#ifndef MI_SSEG_H
#define MI_SSEG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every exported function.
typedef enum MissStatus {
  MISS_STATUS_OK = 0,
  MISS_STATUS_NULL_POINTER = 1,
  MISS_STATUS_INVALID_ARGUMENT = 2,
  MISS_STATUS_DIMENSION = 3,
  MISS_STATUS_CONFIG = 4,
  MISS_STATUS_LOAD = 5,
  MISS_STATUS_CHECKPOINT = 6,
  MISS_STATUS_VALIDATION = 7,
  MISS_STATUS_GENERATION = 8,
  MISS_STATUS_INTERNAL = 9,
  MISS_STATUS_PANIC = 10,
} MissStatus;

// Opaque inference pipeline handle.
typedef struct MissPipeline MissPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next call into this library on the same thread.
const char *miss_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *miss_version(void);

// Loads a pipeline from a segmentation archive and, when `style_path` is not
// null, a style archive. Only the translator weights of the style archive
// are read.
//
// # Safety
// Paths must be null or NUL-terminated strings; `out` must be writable.
enum MissStatus miss_pipeline_load(const char *style_path,
                                   const char *sseg_path,
                                   struct MissPipeline **out);

// Side length of the square images the pipeline accepts, or 0 for null.
//
// # Safety
// `p` must be null or a live handle.
size_t miss_pipeline_input_resolution(const struct MissPipeline *p);

// Side length of the masks the pipeline produces, or 0 for null.
//
// # Safety
// `p` must be null or a live handle.
size_t miss_pipeline_output_resolution(const struct MissPipeline *p);

// Segments one row-major `height × width` image. Raw intensities are
// min-max normalized first. Writes `out_len` labels, which must equal the
// squared output resolution.
//
// # Safety
// `pixels` must hold `height · width` floats and `out_labels` `out_len` bytes.
enum MissStatus miss_pipeline_infer(const struct MissPipeline *p,
                                    const float *pixels,
                                    size_t height,
                                    size_t width,
                                    uint8_t *out_labels,
                                    size_t out_len);

// Releases a pipeline handle. Null is ignored.
//
// # Safety
// `p` must be null or a handle from [`miss_pipeline_load`] not yet freed.
void miss_pipeline_free(struct MissPipeline *p);

// Dice overlap of two binary label arrays of length `len` (nonzero is
// foreground). Two empty masks score 1.
//
// # Safety
// `pred` and `gt` must hold `len` bytes; `out` must be writable.
enum MissStatus miss_dsc(const uint8_t *pred, const uint8_t *gt, size_t len, double *out);

// Renders phantom `seed` at `resolution` with default parameters. Each
// output buffer must hold `resolution²` elements.
//
// # Safety
// Output pointers must be writable for `resolution²` elements.
enum MissStatus miss_synthetic_pair(uint64_t seed,
                                    size_t resolution,
                                    float *out_a,
                                    float *out_b,
                                    uint8_t *out_mask);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MI_SSEG_H */
