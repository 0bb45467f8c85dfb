#ifndef SHUFFLEVIT_H
#define SHUFFLEVIT_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Length of an encoded CONTROL frame.
 */
#define SV_CONTROL_FRAME_LEN 16

/**
 * Result code of every fallible call.
 */
typedef enum SvStatus {
  SV_STATUS_OK = 0,
  SV_STATUS_NULL_POINTER = 1,
  SV_STATUS_INVALID_ARGUMENT = 2,
  SV_STATUS_IO = 3,
  SV_STATUS_PROTOCOL = 4,
  SV_STATUS_BUDGET = 5,
  SV_STATUS_SHAPE = 6,
  SV_STATUS_FORMAT = 7,
  SV_STATUS_NUMERIC = 8,
  SV_STATUS_PANIC = 9,
} SvStatus;

/**
 * Image of `height × width × channels` pixels in `[0, 1]`.
 */
typedef struct SvImage SvImage;

/**
 * Per-image shuffle key.
 */
typedef struct SvKey SvKey;

/**
 * Trained classifier loaded from a checkpoint.
 */
typedef struct SvModel SvModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sv_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sv_version(void);

/**
 * Advances a SplitMix64 state in place and returns the next output.
 *
 * # Safety
 * `state` must point to a valid `uint64_t`.
 */
uint64_t sv_splitmix64_next(uint64_t *state);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum SvStatus sv_key_new(uint64_t seed, size_t patch_size, struct SvKey **out);

/**
 * Loads a key file written by the CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum SvStatus sv_key_read(const char *path, struct SvKey **out);

/**
 * Copies the 16-byte key identifier into `out`.
 *
 * # Safety
 * `key` must be a live handle and `out` must hold 16 bytes.
 */
enum SvStatus sv_key_id(const struct SvKey *key, uint8_t *out);

/**
 * # Safety
 * `key` must be null or a handle from this library, freed once.
 */
void sv_key_free(struct SvKey *key);

/**
 * Copies `height·width·channels` pixels laid out row, column, channel.
 *
 * # Safety
 * `pixels` must point to `len` floats and `out` to a handle slot.
 */
enum SvStatus sv_image_new(size_t height,
                           size_t width,
                           size_t channels,
                           const float *pixels,
                           size_t len,
                           struct SvImage **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum SvStatus sv_image_read(const char *path, struct SvImage **out);

/**
 * Writes the dimensions of `image` into the three out-parameters.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SvStatus sv_image_dims(const struct SvImage *image,
                            size_t *height,
                            size_t *width,
                            size_t *channels);

/**
 * Copies the pixels into `out`, which must hold exactly `len` floats.
 *
 * # Safety
 * `image` must be live and `out` must point to `len` writable floats.
 */
enum SvStatus sv_image_pixels(const struct SvImage *image, float *out, size_t len);

/**
 * # Safety
 * `image` must be null or a handle from this library, freed once.
 */
void sv_image_free(struct SvImage *image);

/**
 * Encrypts `image` under `key` into a new image handle.
 *
 * # Safety
 * Handles must be live and `out` a valid handle slot.
 */
enum SvStatus sv_encrypt(const struct SvImage *image,
                         const struct SvKey *key,
                         struct SvImage **out);

/**
 * Inverts [`sv_encrypt`] for the same key.
 *
 * # Safety
 * Handles must be live and `out` a valid handle slot.
 */
enum SvStatus sv_decrypt(const struct SvImage *image,
                         const struct SvKey *key,
                         struct SvImage **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum SvStatus sv_model_load(const char *path, struct SvModel **out);

/**
 * Patch size the model was built for, or 0 for patch-free models.
 *
 * # Safety
 * `model` must be a live handle.
 */
size_t sv_model_patch_size(const struct SvModel *model);

/**
 * Writes the three class probabilities (SOI, CWI, CI) into `probs`.
 *
 * # Safety
 * Handles must be live and `probs` must hold 3 doubles.
 */
enum SvStatus sv_model_probabilities(const struct SvModel *model,
                                     const struct SvImage *image,
                                     double *probs);

/**
 * Predicted class index (0 SOI, 1 CWI, 2 CI) and its probability.
 *
 * # Safety
 * Handles must be live and the outputs valid.
 */
enum SvStatus sv_model_classify(const struct SvModel *model,
                                const struct SvImage *image,
                                uint8_t *class_index,
                                double *confidence);

/**
 * # Safety
 * `model` must be null or a handle from this library, freed once.
 */
void sv_model_free(struct SvModel *model);

/**
 * Encodes a CONTROL frame for `class_index` into `out`.
 *
 * # Safety
 * `out` must hold `SV_CONTROL_FRAME_LEN` bytes.
 */
enum SvStatus sv_control_encode(uint8_t class_index, float confidence, uint8_t *out);

/**
 * Decodes a CONTROL frame of `len` bytes.
 *
 * # Safety
 * `bytes` must point to `len` bytes and the outputs must be valid.
 */
enum SvStatus sv_control_decode(const uint8_t *bytes,
                                size_t len,
                                uint8_t *class_index,
                                uint8_t *action,
                                float *confidence);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHUFFLEVIT_H */
