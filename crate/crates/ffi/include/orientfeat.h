#ifndef ORIENTFEAT_H
#define ORIENTFEAT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define OF_KIND_ORIENTATION 0

#define OF_KIND_ORIENTATION_MEAN 1

#define OF_KIND_ORIENTATION_AXIS 2

#define OF_KIND_ORIENTATION_ANGLE 3

#define OF_KIND_CA 4

#define OF_KIND_TORSION 5

#define OF_KIND_POINTCLOUD 6

#define OF_KIND_POINTCLOUD_MEAN 7

// Values per residue per frame: N, CA, C times x, y, z.
#define VALUES_PER_RESIDUE 9

typedef enum OfStatus {
  OF_STATUS_OK = 0,
  OF_STATUS_NULL_POINTER = 1,
  // Buffer length or dimensions inconsistent with the declared shape.
  OF_STATUS_SHAPE = 2,
  OF_STATUS_FORMAT = 3,
  OF_STATUS_PARSE = 4,
  OF_STATUS_STRUCTURE = 5,
  OF_STATUS_DEGENERATE_GEOMETRY = 6,
  OF_STATUS_DEGENERATE_RESIDUE = 7,
  OF_STATUS_DOMAIN = 8,
  OF_STATUS_NUMERICAL = 9,
  OF_STATUS_CONFIG = 10,
  OF_STATUS_IO = 11,
  OF_STATUS_JSON = 12,
  // Unknown representation tag or invalid scalar argument.
  OF_STATUS_INVALID_ARGUMENT = 13,
  OF_STATUS_PANIC = 14,
} OfStatus;

// AMUSE result.
typedef struct OfAmuse OfAmuse;

// Owned row-major matrix.
typedef struct OfMatrix OfMatrix;

// Settings for the mean-referenced representations; start from
// [`of_featurize_options_default`].
typedef struct OfFeaturizeOptions {
  size_t mean_max_iters;
  double mean_learning_rate;
  double mean_tol;
  // Relative eigenvalue cutoff of the pointcloud metric pseudo-inverse.
  double pointcloud_delta;
  size_t pointcloud_mean_max_iters;
  double pointcloud_mean_learning_rate;
  double pointcloud_mean_tol;
} OfFeaturizeOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *of_version(void);

// Message for the last failed call on this thread, or NULL after a
// success. Valid until the next call into this library on the same thread.
const char *of_last_error(void);

struct OfFeaturizeOptions of_featurize_options_default(void);

// Compute one representation (`OF_KIND_*`) of a trajectory.
//
// `coords` holds `n_frames * n_residues * 9` values ordered frame, residue,
// atom (N, CA, C), coordinate. `reference` is NULL (frame 0 serves as the
// fixed reference) or `n_residues * 9` values. `options` may be NULL for the
// defaults. On success `*out` receives an `n_frames x d` matrix.
//
// # Safety
// Pointers must be NULL or valid for the stated number of reads; `out`
// must be valid for one write.
enum OfStatus of_featurize(const double *coords,
                           size_t n_frames,
                           size_t n_residues,
                           uint32_t kind,
                           const double *reference,
                           const struct OfFeaturizeOptions *options,
                           struct OfMatrix **out);

// # Safety
// `m` must be a live matrix handle.
size_t of_matrix_rows(const struct OfMatrix *m);

// # Safety
// `m` must be a live matrix handle.
size_t of_matrix_cols(const struct OfMatrix *m);

// Row-major `rows * cols` values owned by the handle.
//
// # Safety
// `m` must be a live matrix handle.
const double *of_matrix_data(const struct OfMatrix *m);

// # Safety
// `m` must be NULL or a handle returned by this library and not yet freed.
void of_matrix_free(struct OfMatrix *m);

// Whitened PCA keeping the smallest component count whose cumulative
// explained variance reaches `evr`, then reversible TICA at `lag`.
// `features` is `rows x cols`, row-major.
//
// # Safety
// `features` must be valid for `rows * cols` reads and `out` for one write.
enum OfStatus of_amuse(const double *features,
                       size_t rows,
                       size_t cols,
                       double evr,
                       size_t lag,
                       size_t n_projections,
                       struct OfAmuse **out);

// Number of TICA components (length of the eigenvalue and timescale arrays).
//
// # Safety
// `a` must be a live AMUSE handle.
size_t of_amuse_n_components(const struct OfAmuse *a);

// # Safety
// `a` must be a live AMUSE handle.
const double *of_amuse_eigenvalues(const struct OfAmuse *a);

// Implied timescales in frames; `INFINITY` for λ ≥ 1 and NaN for λ ≤ 0.
//
// # Safety
// `a` must be a live AMUSE handle.
const double *of_amuse_timescales(const struct OfAmuse *a);

// Projections onto the leading TICs, borrowed from the AMUSE handle.
//
// # Safety
// `a` must be a live AMUSE handle.
const struct OfMatrix *of_amuse_projections(const struct OfAmuse *a);

// True when the input had no variance and the model is a placeholder.
//
// # Safety
// `a` must be a live AMUSE handle.
bool of_amuse_degenerate(const struct OfAmuse *a);

// # Safety
// `a` must be NULL or a handle returned by this library and not yet freed.
void of_amuse_free(struct OfAmuse *a);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ORIENTFEAT_H */
