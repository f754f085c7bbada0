#ifndef POINTREFINE_H
#define POINTREFINE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PrStatus {
  PR_STATUS_OK = 0,
  PR_STATUS_NULL_POINTER = 1,
  PR_STATUS_INVALID_ARGUMENT = 2,
  PR_STATUS_IO = 3,
  PR_STATUS_FORMAT = 4,
  PR_STATUS_CONFIG = 5,
  PR_STATUS_DIMENSION = 6,
  PR_STATUS_EMPTY_CLOUD = 7,
  PR_STATUS_INSUFFICIENT_POINTS = 8,
  PR_STATUS_UNDEFINED_METRIC = 9,
  PR_STATUS_STATE = 10,
  PR_STATUS_NON_FINITE_LOSS = 11,
  PR_STATUS_PANIC = 12,
} PrStatus;

/**
 * Binary mask handle.
 */
typedef struct PrMask PrMask;

/**
 * Trained network handle.
 */
typedef struct PrNetwork PrNetwork;

/**
 * Probability volume handle.
 */
typedef struct PrVolume PrVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `capacity`. Returns the full message length in bytes, so a
 * return value `>= capacity` means the copy was truncated.
 *
 * # Safety
 * `buffer` must be null or point to `capacity` writable bytes.
 */
size_t pr_last_error_message(char *buffer, size_t capacity);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pr_version(void);

/**
 * Builds a volume from `len` values in x-fastest order.
 *
 * # Safety
 * `shape` and `spacing` must point to three elements, `values` to `len`.
 */
enum PrStatus pr_volume_new(const size_t *shape,
                            const double *spacing,
                            const double *values,
                            size_t len,
                            struct PrVolume **out);

/**
 * Reads a `.raw` volume with its `.meta` sidecar.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PrStatus pr_volume_load(const char *path, struct PrVolume **out);

/**
 * # Safety
 * `volume` must be null or a handle from this library not yet freed.
 */
void pr_volume_free(struct PrVolume *volume);

/**
 * Builds a mask from `len` bytes (zero is background) in x-fastest order.
 *
 * # Safety
 * `shape` and `spacing` must point to three elements, `values` to `len`.
 */
enum PrStatus pr_mask_new(const size_t *shape,
                          const double *spacing,
                          const uint8_t *values,
                          size_t len,
                          struct PrMask **out);

/**
 * Number of foreground voxels, or 0 for a null handle.
 *
 * # Safety
 * `mask` must be null or a live handle.
 */
size_t pr_mask_count(const struct PrMask *mask);

/**
 * Writes the mask as 0/1 bytes in x-fastest order into `dst`.
 *
 * # Safety
 * `mask` must be a live handle; `dst` must point to `len` writable bytes.
 */
enum PrStatus pr_mask_copy(const struct PrMask *mask, uint8_t *dst, size_t len);

/**
 * # Safety
 * `mask` must be null or a live handle.
 */
void pr_mask_free(struct PrMask *mask);

/**
 * Loads a trained network checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PrStatus pr_network_load(const char *path, struct PrNetwork **out);

/**
 * Freshly initialized network; `reduced` selects the 512-point variant.
 *
 * # Safety
 * `out` must be writable.
 */
enum PrStatus pr_network_new(bool reduced, uint64_t seed, struct PrNetwork **out);

/**
 * Trainable scalar count, or 0 for a null handle.
 *
 * # Safety
 * `network` must be null or a live handle.
 */
size_t pr_network_parameter_count(const struct PrNetwork *network);

/**
 * Saves the network to a checkpoint file.
 *
 * # Safety
 * `network` must be a live handle and `path` a NUL-terminated string.
 */
enum PrStatus pr_network_save(const struct PrNetwork *network, const char *path);

/**
 * # Safety
 * `network` must be null or a live handle.
 */
void pr_network_free(struct PrNetwork *network);

/**
 * Refines `volume`: thresholds at `theta`, classifies with `repetitions`
 * majority-voted passes, and returns the refined segmentation.
 *
 * # Safety
 * `network` and `volume` must be live handles; `out` must be writable.
 */
enum PrStatus pr_refine(const struct PrNetwork *network,
                        const struct PrVolume *volume,
                        size_t repetitions,
                        double theta,
                        uint64_t seed,
                        struct PrMask **out);

/**
 * Dice coefficient of two masks of equal shape.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be writable.
 */
enum PrStatus pr_dice(const struct PrMask *a, const struct PrMask *b, double *out);

/**
 * 95th-percentile Hausdorff distance in mm, using the spacing of `a`.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be writable.
 */
enum PrStatus pr_hd95(const struct PrMask *a, const struct PrMask *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POINTREFINE_H */
