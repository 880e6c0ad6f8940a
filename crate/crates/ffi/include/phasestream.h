#ifndef PHASESTREAM_H
#define PHASESTREAM_H

#include <stddef.h>
#include <stdint.h>

typedef enum PsDerivative {
  PS_DERIVATIVE_GRAY = 0,
  PS_DERIVATIVE_RGB = 1,
} PsDerivative;

typedef enum PsStatus {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_POINTER = 1,
  PS_STATUS_REJECTED_INPUT = 2,
  PS_STATUS_CONFIG = 3,
  PS_STATUS_INGESTION = 4,
  PS_STATUS_ORACLE = 5,
  PS_STATUS_TRAINING = 6,
  PS_STATUS_FORMAT = 7,
  PS_STATUS_IO = 8,
  PS_STATUS_PANIC = 9,
} PsStatus;

typedef struct PsBank PsBank;

typedef struct PsClip PsClip;

typedef struct PsModel PsModel;

typedef struct PsTensor PsTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated, truncated
 * to `len - 1` bytes) and returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
uintptr_t ps_last_error_message(char *buf, uintptr_t len);

/**
 * Creates a tensor of the given shape from `len` floats.
 *
 * # Safety
 * `shape` must point to `ndim` values and `data` to `len` floats.
 */
enum PsStatus ps_tensor_new(const uintptr_t *shape,
                            uintptr_t ndim,
                            const float *data,
                            uintptr_t len,
                            struct PsTensor **out);

/**
 * # Safety
 * `t` must be a live tensor handle.
 */
uintptr_t ps_tensor_ndim(const struct PsTensor *t);

/**
 * # Safety
 * `t` must be a live tensor handle.
 */
uintptr_t ps_tensor_len(const struct PsTensor *t);

/**
 * Writes the shape into `out`, which must hold `ndim` values.
 *
 * # Safety
 * `t` must be a live tensor handle and `out` point to `cap` writable values.
 */
enum PsStatus ps_tensor_shape(const struct PsTensor *t, uintptr_t *out, uintptr_t cap);

/**
 * Copies the tensor's values into `out`, which must hold `ps_tensor_len` floats.
 *
 * # Safety
 * `t` must be a live tensor handle and `out` point to `cap` writable floats.
 */
enum PsStatus ps_tensor_copy_data(const struct PsTensor *t, float *out, uintptr_t cap);

/**
 * # Safety
 * `t` must be null or a handle not yet freed.
 */
void ps_tensor_free(struct PsTensor *t);

/**
 * Builds a named Gabor bank preset: `quadrature24`, `perpendicular24`,
 * `quadrature96` or `perpendicular96`.
 *
 * # Safety
 * `name` must be a NUL-terminated string.
 */
enum PsStatus ps_bank_preset(const char *name, struct PsBank **out);

/**
 * # Safety
 * `b` must be a live bank handle.
 */
uintptr_t ps_bank_len(const struct PsBank *b);

/**
 * # Safety
 * `b` must be a live bank handle.
 */
uintptr_t ps_bank_kernel_size(const struct PsBank *b);

/**
 * Real and imaginary parts of kernel `index` as two `[k, k]` tensors.
 *
 * # Safety
 * `b` must be a live bank handle; `real` and `imag` writable handle slots.
 */
enum PsStatus ps_bank_kernel(const struct PsBank *b,
                             uintptr_t index,
                             struct PsTensor **real,
                             struct PsTensor **imag);

/**
 * # Safety
 * `b` must be null or a handle not yet freed.
 */
void ps_bank_free(struct PsBank *b);

/**
 * Loads a clip from a directory of PGM/PPM/PNG frames.
 *
 * # Safety
 * `dir` must be a NUL-terminated path.
 */
enum PsStatus ps_clip_load(const char *dir, struct PsClip **out);

/**
 * Builds a clip from a `[T, C, H, W]` tensor.
 *
 * # Safety
 * `frames` must be a live tensor handle.
 */
enum PsStatus ps_clip_from_tensor(const struct PsTensor *frames, struct PsClip **out);

/**
 * # Safety
 * `c` must be a live clip handle.
 */
uintptr_t ps_clip_len(const struct PsClip *c);

/**
 * # Safety
 * `c` must be null or a handle not yet freed.
 */
void ps_clip_free(struct PsClip *c);

/**
 * Forward temporal differences of a clip as `[T-1, C', H, W]`.
 *
 * # Safety
 * `c` must be a live clip handle.
 */
enum PsStatus ps_temporal_derivative(const struct PsClip *c,
                                     enum PsDerivative kind,
                                     struct PsTensor **out);

/**
 * Wrapped phase differences under a quadrature bank as `[T-1, F, H, W]`.
 *
 * # Safety
 * `c` and `b` must be live handles.
 */
enum PsStatus ps_temporal_phase_derivative(const struct PsClip *c,
                                           const struct PsBank *b,
                                           struct PsTensor **out);

/**
 * Phase of one `[C, H, W]` frame under every kernel of a bank, as `[F, H, W]`.
 *
 * # Safety
 * `frame` and `b` must be live handles.
 */
enum PsStatus ps_phase_image(const struct PsTensor *frame,
                             const struct PsBank *b,
                             struct PsTensor **out);

/**
 * Loads a model checkpoint written by the `train` command.
 *
 * # Safety
 * `path` must be a NUL-terminated path.
 */
enum PsStatus ps_model_load(const char *path, struct PsModel **out);

/**
 * # Safety
 * `m` must be a live model handle.
 */
uintptr_t ps_model_num_classes(const struct PsModel *m);

/**
 * Inference-mode logits `[N, classes]` for an `[N, C, H, W]` input.
 *
 * # Safety
 * `m` and `input` must be live handles.
 */
enum PsStatus ps_model_predict(struct PsModel *m,
                               const struct PsTensor *input,
                               struct PsTensor **out);

/**
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void ps_model_free(struct PsModel *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHASESTREAM_H */
