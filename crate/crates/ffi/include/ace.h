#ifndef ACE_FFI_H
#define ACE_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code of every fallible call.
typedef enum AceStatus {
  ACE_STATUS_OK = 0,
  // A required pointer argument was NULL.
  ACE_STATUS_NULL_POINTER = 1,
  // Input failed validation (range, normalization, configuration).
  ACE_STATUS_INVALID = 2,
  // Dimensions do not line up.
  ACE_STATUS_SHAPE = 3,
  // An iterative routine failed to converge.
  ACE_STATUS_NUMERICAL = 4,
  // Filesystem failure.
  ACE_STATUS_IO = 5,
  // A panic was caught at the boundary; state may be stale.
  ACE_STATUS_PANIC = 6,
} AceStatus;

// Opaque adaptive class-weight diagonal handle.
typedef struct AceAdaptive AceAdaptive;

// Opaque prediction batch handle (softmax columns plus labels).
typedef struct AceBatch AceBatch;

// Opaque dense matrix handle.
typedef struct AceMatrix AceMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ace_version(void);

// Thread-local message describing the most recent failure. The pointer is
// valid until the next failing call on the same thread.
const char *ace_last_error_message(void);

// Creates a dense matrix from a row-major buffer of `rows * cols` doubles.
//
// # Safety
// `data` must point to at least `rows * cols` readable doubles and `out`
// to a writable pointer slot.
enum AceStatus ace_matrix_new(size_t rows, size_t cols, const double *data, struct AceMatrix **out);

// Releases a matrix handle. NULL is a no-op.
//
// # Safety
// `matrix` must be a handle from [`ace_matrix_new`] not yet freed.
void ace_matrix_free(struct AceMatrix *matrix);

// Sum of the singular values.
//
// # Safety
// `matrix` must be a live handle; `out` must be writable.
enum AceStatus ace_matrix_nuclear_norm(const struct AceMatrix *matrix, double *out);

// Writes the singular values (descending) into `out`; `out_len` receives
// the count, which is `min(rows, cols)`.
//
// # Safety
// `out` must hold at least `min(rows, cols)` doubles.
enum AceStatus ace_matrix_singular_values(const struct AceMatrix *matrix,
                                          double *out,
                                          size_t out_capacity,
                                          size_t *out_len);

// Creates a prediction batch from a row-major `num_classes x batch_size`
// probability matrix (columns are per-sample softmax outputs) and one
// label per sample.
//
// # Safety
// `probabilities` must hold `num_classes * batch_size` doubles and
// `labels` must hold `batch_size` entries.
enum AceStatus ace_batch_new(size_t num_classes,
                             size_t batch_size,
                             const double *probabilities,
                             const size_t *labels,
                             struct AceBatch **out);

// Releases a batch handle. NULL is a no-op.
//
// # Safety
// `batch` must be a handle from [`ace_batch_new`] not yet freed.
void ace_batch_free(struct AceBatch *batch);

// Builds the adaptive diagonal from per-class sample counts and tau.
//
// # Safety
// `counts` must hold `num_classes` entries; `out` must be writable.
enum AceStatus ace_adaptive_new(const size_t *counts,
                                size_t num_classes,
                                double tau,
                                struct AceAdaptive **out);

// Releases an adaptive-diagonal handle. NULL is a no-op.
//
// # Safety
// `adaptive` must be a handle from [`ace_adaptive_new`] not yet freed.
void ace_adaptive_free(struct AceAdaptive *adaptive);

// Copies the diagonal entries into `out` (one per class).
//
// # Safety
// `out` must hold at least as many doubles as there are classes.
enum AceStatus ace_adaptive_diag(const struct AceAdaptive *adaptive,
                                 double *out,
                                 size_t out_capacity);

// Batch confusion norm of the prediction batch.
//
// # Safety
// `batch` must be a live handle; `out` must be writable.
enum AceStatus ace_bcn(const struct AceBatch *batch, bool use_svd_reference, double *out);

// Adaptive confusion energy of the batch under the class weights.
//
// # Safety
// `batch` and `adaptive` must be live handles; `out` must be writable.
enum AceStatus ace_energy_of(const struct AceBatch *batch,
                             const struct AceAdaptive *adaptive,
                             bool use_svd_reference,
                             double *out);

// Learnable-variant loss: energy plus `eta` times the squared distance of
// the diagonal from its frozen reference.
//
// # Safety
// `batch` and `adaptive` must be live handles; `out` must be writable.
enum AceStatus ace_loss_learnable_of(const struct AceBatch *batch,
                                     const struct AceAdaptive *adaptive,
                                     double eta,
                                     bool use_svd_reference,
                                     double *out);

// Gradient of the energy with respect to the prediction matrix, written
// row-major into `out` (`num_classes * batch_size` doubles).
//
// # Safety
// `out` must hold `num_classes * batch_size` doubles.
enum AceStatus ace_grad_wrt_p_of(const struct AceBatch *batch,
                                 const struct AceAdaptive *adaptive,
                                 double *out,
                                 size_t out_capacity);

// Gradient of the learnable loss with respect to the diagonal (one double
// per class).
//
// # Safety
// `out` must hold one double per class.
enum AceStatus ace_grad_wrt_ahat_of(const struct AceBatch *batch,
                                    const struct AceAdaptive *adaptive,
                                    double eta,
                                    double *out,
                                    size_t out_capacity);

// Gradient of the energy with respect to the logits that produced the
// batch, written row-major into `out`.
//
// # Safety
// `out` must hold `num_classes * batch_size` doubles.
enum AceStatus ace_grad_wrt_logits_of(const struct AceBatch *batch,
                                      const struct AceAdaptive *adaptive,
                                      double *out,
                                      size_t out_capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACE_FFI_H */
