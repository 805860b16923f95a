#ifndef MRDIFF_H
#define MRDIFF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result of an API call.
typedef enum MrdStatus {
  MRD_STATUS_OK = 0,
  MRD_STATUS_INVALID_ARGUMENT = 1,
  MRD_STATUS_NULL_POINTER = 2,
  MRD_STATUS_IO = 3,
  MRD_STATUS_FORMAT = 4,
  MRD_STATUS_NUMERIC = 5,
  MRD_STATUS_PANIC = 6,
} MrdStatus;

// Shape of the per-step rate λ_t.
typedef enum MrdScheduleShape {
  // Linear ramp with `λ_T / λ_1 = 10`.
  MRD_SCHEDULE_SHAPE_LINEAR = 0,
  MRD_SCHEDULE_SHAPE_CONSTANT = 1,
} MrdScheduleShape;

// Opaque trained denoiser loaded from a checkpoint.
typedef struct MrdModel MrdModel;

// Opaque noise schedule.
typedef struct MrdSchedule MrdSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *mrd_version(void);

// Message of the last failed call on this thread, or NULL after a success.
// The pointer stays valid until the next API call on the same thread.
const char *mrd_last_error(void);

// Builds a schedule with `steps` steps and stationary deviation `delta`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum MrdStatus mrd_schedule_new(size_t steps,
                                double delta,
                                enum MrdScheduleShape shape,
                                struct MrdSchedule **out);

// # Safety
// `schedule` must come from [`mrd_schedule_new`] and not be used afterwards.
void mrd_schedule_free(struct MrdSchedule *schedule);

// Number of steps, or 0 for a null handle.
//
// # Safety
// `schedule` must be null or a live handle.
size_t mrd_schedule_steps(const struct MrdSchedule *schedule);

// Mean decay `exp(−λ̄_t)` at step `t`.
//
// # Safety
// `schedule` must be a live handle and `out` writable.
enum MrdStatus mrd_schedule_mean_coeff(const struct MrdSchedule *schedule, size_t t, double *out);

// Marginal variance `n_t` at step `t`.
//
// # Safety
// `schedule` must be a live handle and `out` writable.
enum MrdStatus mrd_schedule_variance(const struct MrdSchedule *schedule, size_t t, double *out);

// Weights `(a_t, b_t)` of the one-step posterior mean
// `a_t (x_t − μ) + b_t (x_0 − μ) + μ`.
//
// # Safety
// `schedule` must be a live handle; `a` and `b` writable.
enum MrdStatus mrd_schedule_posterior_coeffs(const struct MrdSchedule *schedule,
                                             size_t t,
                                             double *a,
                                             double *b);

// Loads a trained model from a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string; `out` writable.
enum MrdStatus mrd_model_load(const char *path, struct MrdModel **out);

// # Safety
// `model` must come from [`mrd_model_load`] and not be used afterwards.
void mrd_model_free(struct MrdModel *model);

// Upscaling factor, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t mrd_model_scale(const struct MrdModel *model);

// Super-resolves a `3 × height × width` image into `out`, which must hold
// `3 × (height·r) × (width·r)` values. `steps = 0` uses every schedule step.
//
// # Safety
// `model` must be a live handle; `lr` readable and `out` writable for the
// stated lengths.
enum MrdStatus mrd_model_upscale(const struct MrdModel *model,
                                 const float *lr,
                                 size_t height,
                                 size_t width,
                                 size_t steps,
                                 bool deterministic,
                                 uint64_t seed,
                                 float *out,
                                 size_t out_len);

// Bicubic resize of a planar image to `out_height × out_width`.
//
// # Safety
// `src` readable for `channels·height·width` values and `dst` writable for
// `channels·out_height·out_width` values.
enum MrdStatus mrd_bicubic_resize(const float *src,
                                  size_t channels,
                                  size_t height,
                                  size_t width,
                                  float *dst,
                                  size_t out_height,
                                  size_t out_width);

// PSNR in dB between two images of equal shape; 99 for identical inputs.
//
// # Safety
// `a` and `b` readable for `channels·height·width` values; `out` writable.
enum MrdStatus mrd_psnr(const float *a,
                        const float *b,
                        size_t channels,
                        size_t height,
                        size_t width,
                        double peak,
                        double *out);

// Mean SSIM on luminance. `channels` must be 1 or 3.
//
// # Safety
// As [`mrd_psnr`].
enum MrdStatus mrd_ssim(const float *a,
                        const float *b,
                        size_t channels,
                        size_t height,
                        size_t width,
                        double *out);

// Average gradient: mean of `sqrt((dx² + dy²) / 2)` over luminance.
//
// # Safety
// `img` readable for `channels·height·width` values; `out` writable.
enum MrdStatus mrd_avg_gradient(const float *img,
                                size_t channels,
                                size_t height,
                                size_t width,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MRDIFF_H */
