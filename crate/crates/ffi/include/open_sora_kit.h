#ifndef OPEN_SORA_KIT_H
#define OPEN_SORA_KIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OskStatus {
  OSK_STATUS_OK = 0,
  OSK_STATUS_NULL_POINTER = 1,
  OSK_STATUS_INVALID_ARGUMENT = 2,
  OSK_STATUS_DIMENSION = 3,
  OSK_STATUS_DOMAIN = 4,
  OSK_STATUS_PRECONDITION = 5,
  OSK_STATUS_NON_FINITE = 6,
  OSK_STATUS_IO = 7,
  OSK_STATUS_FORMAT = 8,
  OSK_STATUS_CONFIG = 9,
  OSK_STATUS_BUFFER_TOO_SMALL = 10,
  OSK_STATUS_INTERNAL = 11,
} OskStatus;

/**
 * Camera label codes for [`osk_format_caption`]; `None` leaves it off.
 */
typedef enum OskCamera {
  OSK_CAMERA_NONE = -1,
  OSK_CAMERA_STATIC = 0,
  OSK_CAMERA_PAN_LEFT = 1,
  OSK_CAMERA_PAN_RIGHT = 2,
  OSK_CAMERA_TILT_UP = 3,
  OSK_CAMERA_TILT_DOWN = 4,
  OSK_CAMERA_ZOOM_IN = 5,
  OSK_CAMERA_ZOOM_OUT = 6,
} OskCamera;

/**
 * Trained latent codec.
 */
typedef struct OskCodec OskCodec;

/**
 * Diffusion model loaded from a checkpoint.
 */
typedef struct OskModel OskModel;

/**
 * Video tensor `[frames, height, width, channels]` with values in `[0, 1]`.
 */
typedef struct OskVideo OskVideo;

typedef struct OskGenerateParams {
  /**
   * NUL-terminated UTF-8 prompt.
   */
  const char *prompt;
  size_t frames;
  /**
   * Square side in pixels; a multiple of 8.
   */
  size_t resolution;
  double fps;
  size_t steps;
  uint64_t seed;
  size_t text_max_len;
  /**
   * Mask spec such as `first:1`, or NULL for unconditioned sampling.
   */
  const char *condition;
} OskGenerateParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to fit) and returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be NULL or point to `len` writable bytes.
 */
size_t osk_last_error(char *buf, size_t len);

/**
 * Crate version as a static NUL-terminated string.
 */
const char *osk_version(void);

/**
 * Builds a video from `frames·height·width·channels` floats in frame-major,
 * channel-last order.
 *
 * # Safety
 * `data` must point to that many floats; `out` must be writable.
 */
enum OskStatus osk_video_new(size_t frames,
                             size_t height,
                             size_t width,
                             size_t channels,
                             const float *data,
                             struct OskVideo **out);

/**
 * Reads a `.vten` video file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum OskStatus osk_video_read(const char *path, struct OskVideo **out);

/**
 * # Safety
 * `video` must be a live handle; `path` a NUL-terminated string.
 */
enum OskStatus osk_video_write(const struct OskVideo *video, const char *path);

/**
 * Writes `[frames, height, width, channels]` into `shape`.
 *
 * # Safety
 * `video` must be a live handle; `shape` must point to 4 writable `size_t`.
 */
enum OskStatus osk_video_shape(const struct OskVideo *video, size_t *shape);

/**
 * Copies the pixel values into `buf`, which must hold at least the
 * product of the shape.
 *
 * # Safety
 * `video` must be a live handle; `buf` must point to `len` writable floats.
 */
enum OskStatus osk_video_data(const struct OskVideo *video, float *buf, size_t len);

/**
 * # Safety
 * `video` must be NULL or a handle not yet freed.
 */
void osk_video_free(struct OskVideo *video);

/**
 * Loads a codec directory written by `codec-train`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum OskStatus osk_codec_load(const char *dir, struct OskCodec **out);

/**
 * Encodes and decodes `video`, returning the reconstruction.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum OskStatus osk_codec_roundtrip(const struct OskCodec *codec,
                                   const struct OskVideo *video,
                                   struct OskVideo **out);

/**
 * # Safety
 * `codec` must be NULL or a handle not yet freed.
 */
void osk_codec_free(struct OskCodec *codec);

/**
 * Loads the model from a training checkpoint directory (the one holding
 * `model/`).
 *
 * # Safety
 * `checkpoint` must be a NUL-terminated string; `out` must be writable.
 */
enum OskStatus osk_model_load(const char *checkpoint, struct OskModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void osk_model_free(struct OskModel *model);

/**
 * Samples a video. `condition_video` supplies the conditioning frames when
 * `params.condition` is set and must be NULL otherwise.
 *
 * # Safety
 * Handles must be live, `params` readable with valid strings, and `out`
 * writable.
 */
enum OskStatus osk_generate(const struct OskModel *model,
                            const struct OskCodec *codec,
                            const struct OskGenerateParams *params,
                            const struct OskVideo *condition_video,
                            struct OskVideo **out);

/**
 * PSNR (dB) and SSIM between two videos of equal shape.
 *
 * # Safety
 * Handles must be live; `psnr` and `ssim` must be writable.
 */
enum OskStatus osk_quality(const struct OskVideo *a,
                           const struct OskVideo *b,
                           double *psnr,
                           double *ssim);

/**
 * Formats a caption with appended scores into `buf` (NUL-terminated).
 * `written` receives the string length in bytes, also when the buffer is
 * too small.
 *
 * # Safety
 * `caption` must be a NUL-terminated string, `buf` NULL or `len` writable
 * bytes, and `written` writable.
 */
enum OskStatus osk_format_caption(const char *caption,
                                  double aesthetic,
                                  double motion,
                                  int32_t camera,
                                  char *buf,
                                  size_t len,
                                  size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPEN_SORA_KIT_H */
