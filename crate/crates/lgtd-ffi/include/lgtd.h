/* C interface for the lgtd video super-resolution library. */

#ifndef LGTD_H
#define LGTD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum LgtdStatus {
  // Success.
  LGTD_STATUS_OK = 0,
  // A required pointer argument was NULL.
  LGTD_STATUS_NULL_ARGUMENT = 1,
  // Argument values were rejected (dimensions, counts, file contents).
  LGTD_STATUS_INVALID_ARGUMENT = 2,
  // The file could not be read or parsed.
  LGTD_STATUS_IO = 3,
  // Unexpected internal failure (a bug; see lgtd_last_error).
  LGTD_STATUS_INTERNAL = 4,
} LgtdStatus;

// An opaque loaded model: architecture plus trained parameters.
typedef struct LgtdModel LgtdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread (empty string if no
// call has failed). The pointer stays valid until the next failing call on
// the same thread.
const char *lgtd_last_error(void);

// Library version as a static NUL-terminated string.
const char *lgtd_version(void);

// Loads a model checkpoint from `path` into a new handle at `*out`.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
// On success the caller owns the handle and must release it with
// [`lgtd_model_free`].
enum LgtdStatus lgtd_model_load(const char *path, struct LgtdModel **out);

// Releases a handle returned by [`lgtd_model_load`]. NULL is a no-op.
//
// # Safety
// `model` must be NULL or a pointer returned by [`lgtd_model_load`] that
// has not been freed yet.
void lgtd_model_free(struct LgtdModel *model);

// Number of input frames the model consumes per output frame.
//
// # Safety
// `model` must be a live handle from [`lgtd_model_load`].
size_t lgtd_model_frames(const struct LgtdModel *model);

// Upsampling factor of the model (output edge length / input edge length).
//
// # Safety
// `model` must be a live handle from [`lgtd_model_load`].
size_t lgtd_model_scale(const struct LgtdModel *model);

// Super-resolves the centre frame of a clip.
//
// `frames` holds `t` RGB frames of `h`x`w` pixels (layout
// `frame, channel, row, column`, so `t*3*h*w` doubles). `t` must equal
// [`lgtd_model_frames`]. The result — one RGB frame of `(h*scale)` by
// `(w*scale)` pixels, `3*h*scale*w*scale` doubles — is written to `out`.
//
// # Safety
// `model` must be a live handle; `frames` must hold `t*3*h*w` readable
// doubles; `out` must hold `3*(h*scale)*(w*scale)` writable doubles.
enum LgtdStatus lgtd_super_resolve(const struct LgtdModel *model,
                                   const double *frames,
                                   size_t t,
                                   size_t h,
                                   size_t w,
                                   double *out);

// Luma PSNR in dB between two RGB frames (`3*h*w` doubles each, [0, 1]),
// after cropping `border` pixels from every side. Identical frames give
// +infinity.
//
// # Safety
// `a` and `b` must hold `3*h*w` readable doubles; `out` must be writable.
enum LgtdStatus lgtd_psnr(const double *a,
                          const double *b,
                          size_t h,
                          size_t w,
                          size_t border,
                          double *out);

// Luma structural similarity between two RGB frames (`3*h*w` doubles
// each, [0, 1]), after cropping `border` pixels from every side.
//
// # Safety
// `a` and `b` must hold `3*h*w` readable doubles; `out` must be writable.
enum LgtdStatus lgtd_ssim(const double *a,
                          const double *b,
                          size_t h,
                          size_t w,
                          size_t border,
                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LGTD_H */
