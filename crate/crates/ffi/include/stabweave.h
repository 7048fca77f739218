#ifndef STABWEAVE_H
#define STABWEAVE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum SwStatus {
  SW_STATUS_OK = 0,
  SW_STATUS_NULL_POINTER = 1,
  SW_STATUS_INVALID_ARGUMENT = 2,
  SW_STATUS_INPUT_ERROR = 3,
  SW_STATUS_ESTIMATION_FAILED = 4,
  SW_STATUS_NO_OUTPUT = 5,
  SW_STATUS_BUFFER_TOO_SMALL = 6,
  SW_STATUS_INTERNAL = 7,
} SwStatus;

// Opaque online stitcher.
typedef struct SwStitcher SwStitcher;

// Description of the most recent output frame.
typedef struct SwFrameInfo {
  // 1-based frame index.
  uint64_t t;
  uint32_t width;
  uint32_t height;
  uint32_t channels;
  // 0 for pass-through startup frames.
  uint8_t smoothed;
  // Overlap PSNR in dB, NaN without overlap.
  double psnr;
  double distortion;
} SwFrameInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on this thread.
const char *sw_last_error(void);

// Library version as a static NUL-terminated string.
const char *sw_version(void);

// Creates an online stitcher. `config_json` may be null for defaults;
// otherwise it is a JSON pipeline configuration. Offline mode is rejected.
//
// # Safety
// `config_json` must be null or a valid NUL-terminated string, and `out`
// a valid pointer.
enum SwStatus sw_stitcher_new(const char *config_json, struct SwStitcher **out);

// Releases a stitcher. Null is ignored.
//
// # Safety
// `handle` must be null or come from [`sw_stitcher_new`] and not be used afterwards.
void sw_stitcher_free(struct SwStitcher *handle);

// Feeds one synchronized pair of interleaved 8-bit frames (1 or 3
// channels, row-major, no padding) and produces one output frame.
//
// # Safety
// `handle` must be a live stitcher; each pixel pointer must address
// `width * height * channels` bytes.
enum SwStatus sw_stitcher_push(struct SwStitcher *handle,
                               const uint8_t *reference,
                               const uint8_t *target,
                               uint32_t width,
                               uint32_t height,
                               uint32_t channels);

// Describes the frame produced by the last successful push.
//
// # Safety
// `handle` must be a live stitcher and `info` a valid pointer.
enum SwStatus sw_stitcher_output_info(const struct SwStitcher *handle, struct SwFrameInfo *info);

// Copies the last output frame as interleaved 8-bit pixels into `buffer`
// of `len` bytes, which must hold `width * height * channels` bytes.
//
// # Safety
// `handle` must be a live stitcher and `buffer` valid for `len` bytes.
enum SwStatus sw_stitcher_copy_output(const struct SwStitcher *handle, uint8_t *buffer, size_t len);

// Splits the row-major homography `h` (reference to target, for frames of
// `width` x `height`) into the homographies that take each view to the
// shared plane at fraction `beta`. Outputs are row-major and normalized.
//
// # Safety
// `h`, `out_ref` and `out_tgt` must each address nine doubles.
enum SwStatus sw_decompose(const double *h,
                           uint32_t width,
                           uint32_t height,
                           double beta,
                           double *out_ref,
                           double *out_tgt);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STABWEAVE_H */
