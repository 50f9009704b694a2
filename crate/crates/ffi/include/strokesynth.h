#ifndef STROKESYNTH_H
#define STROKESYNTH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum SsStatus {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  SS_STATUS_INVALID_ARGUMENT = 2,
  SS_STATUS_IO = 3,
  SS_STATUS_FORMAT = 4,
  SS_STATUS_GRID_MISMATCH = 5,
  SS_STATUS_CONFIG = 6,
  SS_STATUS_NUMERIC = 7,
  SS_STATUS_PANIC = 8,
} SsStatus;

typedef enum SsDtype {
  SS_DTYPE_UINT8 = 2,
  SS_DTYPE_INT16 = 4,
  SS_DTYPE_INT32 = 8,
  SS_DTYPE_FLOAT32 = 16,
  SS_DTYPE_FLOAT64 = 64,
} SsDtype;

typedef enum SsHd95Mode {
  SS_HD95_MODE_POOLED = 0,
  SS_HD95_MODE_MAX_OF_SIDES = 1,
} SsHd95Mode;

/**
 * Opaque ordered list of channel volumes on one grid.
 */
typedef struct SsStack SsStack;

/**
 * Opaque 3-D scalar volume.
 */
typedef struct SsVolume SsVolume;

/**
 * Per-case lesion metrics; `avd` in cm³, `hd95` in mm.
 */
typedef struct SsMetricReport {
  double dice;
  double hd95;
  double avd;
  uint64_t ald;
  double lf1;
  double tpr;
  double fpr;
} SsMetricReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after success.
 */
const char *ss_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ss_version(void);

/**
 * Creates a volume of shape `dims[0..3]` (x fastest). `data` may be null
 * for zeros, otherwise it must hold the product of `dims` values.
 * `spacing` and `origin` may be null (1 mm, zero).
 *
 * # Safety
 * Non-null pointers must be valid for the documented number of elements.
 */
enum SsStatus ss_volume_new(const uintptr_t *dims,
                            const double *data,
                            const double *spacing,
                            const double *origin,
                            struct SsVolume **out);

/**
 * Releases a volume; null is ignored.
 *
 * # Safety
 * `v` must come from this library and not be used afterwards.
 */
void ss_volume_free(struct SsVolume *v);

/**
 * Writes the shape into `dims[0..3]`.
 *
 * # Safety
 * `dims` must hold three elements.
 */
enum SsStatus ss_volume_shape(const struct SsVolume *v, uintptr_t *dims);

/**
 * Borrowed pointer to the voxel values (x fastest) and their count. The
 * pointer stays valid until the volume is freed.
 *
 * # Safety
 * `v`, `data` and `len` must be valid.
 */
enum SsStatus ss_volume_data(const struct SsVolume *v, const double **data, uintptr_t *len);

/**
 * Mutable variant of [`ss_volume_data`].
 *
 * # Safety
 * `v`, `data` and `len` must be valid; no other reference may alias `v`.
 */
enum SsStatus ss_volume_data_mut(struct SsVolume *v, double **data, uintptr_t *len);

/**
 * Reads a `.nii` or `.nii.gz` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum SsStatus ss_nifti_read(const char *path, struct SsVolume **out);

/**
 * Writes a volume; a `.gz` suffix selects gzip.
 *
 * # Safety
 * `v` must be valid and `path` NUL-terminated.
 */
enum SsStatus ss_nifti_write(const struct SsVolume *v, const char *path, enum SsDtype dtype);

/**
 * New volume with voxel axes permuted and flipped towards RAS.
 *
 * # Safety
 * `v` and `out` must be valid.
 */
enum SsStatus ss_reorient_ras(const struct SsVolume *v, struct SsVolume **out);

/**
 * Lesion metrics of `pred` against `gt` (non-zero voxels are lesion).
 * With `prepare` set, both masks are first resampled onto the shared
 * 1 mm evaluation grid; otherwise they must share a grid.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SsStatus ss_metrics(const struct SsVolume *pred,
                         const struct SsVolume *gt,
                         enum SsHd95Mode mode,
                         bool prepare,
                         struct SsMetricReport *out);

/**
 * Pseudo-label confidence threshold `1.5 / channels`; NaN for zero.
 */
double ss_pl_threshold(uintptr_t channels);

/**
 * Creates an empty stack.
 *
 * # Safety
 * `out` must be valid.
 */
enum SsStatus ss_stack_new(struct SsStack **out);

/**
 * Releases a stack; null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void ss_stack_free(struct SsStack *s);

/**
 * Appends a copy of `v`; it must share the grid of existing channels.
 *
 * # Safety
 * `s` and `v` must be valid.
 */
enum SsStatus ss_stack_push(struct SsStack *s, const struct SsVolume *v);

/**
 * Number of channels; 0 for null.
 *
 * # Safety
 * `s` must be null or valid.
 */
uintptr_t ss_stack_len(const struct SsStack *s);

/**
 * Copy of channel `index` as a new volume.
 *
 * # Safety
 * `s` and `out` must be valid.
 */
enum SsStatus ss_stack_channel(const struct SsStack *s, uintptr_t index, struct SsVolume **out);

/**
 * Voxelwise Shannon entropy (nats) of a stack of class probabilities.
 *
 * # Safety
 * `s` and `out` must be valid.
 */
enum SsStatus ss_entropy(const struct SsStack *s, struct SsVolume **out);

/**
 * Renders one synthetic image/label pair.
 *
 * `healthy` holds one posterior volume per class, named by
 * `class_names[0..len]`; `lesion` is a mask (non-zero inside).
 * `config_toml` may be null for defaults. The draws are those of sample
 * `index` under master `seed`, matching the command-line generator.
 *
 * # Safety
 * All non-null pointers must be valid; `class_names` must hold one
 * NUL-terminated string per stack channel.
 */
enum SsStatus ss_generate_sample(const struct SsStack *healthy,
                                 const char *const *class_names,
                                 const struct SsVolume *lesion,
                                 const char *config_toml,
                                 uint64_t seed,
                                 uint64_t index,
                                 struct SsVolume **out_image,
                                 struct SsVolume **out_label);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STROKESYNTH_H */
