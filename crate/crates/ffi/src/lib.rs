//! C ABI for the confusion-energy core: opaque handles, status codes, and
//! flat buffers, so other languages can evaluate the losses and gradients
//! without reimplementing them.
//!
//! Conventions:
//! - Every fallible call returns an [`AceStatus`]; outputs go through
//!   pointers and are written only on `Ok`.
//! - Handles created by `*_new` functions must be released with the
//!   matching `*_free`; passing them to anything else afterwards is
//!   undefined behavior.
//! - Matrix buffers are row-major. Prediction matrices are `num_classes x
//!   batch_size` with one softmax column per sample.
//! - `ace_last_error_message` returns a thread-local, NUL-terminated
//!   description of the most recent failure on this thread.

use ace_core::ace::{
    ace_energy, ace_grad_wrt_ahat, ace_grad_wrt_logits, ace_grad_wrt_p, ace_loss_learnable, bcn,
    AdaptiveMatrix, AdaptiveSpec, BcnPath, PredictionBatch,
};
use ace_core::linalg::Matrix;
use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AceStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// Input failed validation (range, normalization, configuration).
    Invalid = 2,
    /// Dimensions do not line up.
    Shape = 3,
    /// An iterative routine failed to converge.
    Numerical = 4,
    /// Filesystem failure.
    Io = 5,
    /// A panic was caught at the boundary; state may be stale.
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &ace_core::Error) -> AceStatus {
    match err {
        ace_core::Error::Shape(_) => AceStatus::Shape,
        ace_core::Error::Invalid(_) | ace_core::Error::Parse { .. } => AceStatus::Invalid,
        ace_core::Error::Numerical(_) => AceStatus::Numerical,
        ace_core::Error::Io { .. } => AceStatus::Io,
    }
}

fn guard(body: impl FnOnce() -> Result<(), AceStatus> + std::panic::UnwindSafe) -> AceStatus {
    match catch_unwind(body) {
        Ok(Ok(())) => AceStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("panic caught at the ffi boundary");
            AceStatus::Panic
        }
    }
}

fn fail(err: ace_core::Error) -> AceStatus {
    set_error(&err.to_string());
    status_of(&err)
}

fn null_fail(what: &str) -> AceStatus {
    set_error(&format!("{what} must not be NULL"));
    AceStatus::NullPointer
}

/// Opaque dense matrix handle.
pub struct AceMatrix(Matrix);

/// Opaque prediction batch handle (softmax columns plus labels).
pub struct AceBatch(PredictionBatch);

/// Opaque adaptive class-weight diagonal handle.
pub struct AceAdaptive(AdaptiveMatrix);

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ace_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Thread-local message describing the most recent failure. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ace_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Creates a dense matrix from a row-major buffer of `rows * cols` doubles.
///
/// # Safety
/// `data` must point to at least `rows * cols` readable doubles and `out`
/// to a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn ace_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut AceMatrix,
) -> AceStatus {
    guard(AssertUnwindSafe(|| {
        if out.is_null() {
            return Err(null_fail("out"));
        }
        if data.is_null() {
            return Err(null_fail("data"));
        }
        let slice = std::slice::from_raw_parts(data, rows.saturating_mul(cols));
        let matrix = Matrix::new(rows, cols, slice.to_vec()).map_err(fail)?;
        *out = Box::into_raw(Box::new(AceMatrix(matrix)));
        Ok(())
    }))
}

/// Releases a matrix handle. NULL is a no-op.
///
/// # Safety
/// `matrix` must be a handle from [`ace_matrix_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ace_matrix_free(matrix: *mut AceMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// Sum of the singular values.
///
/// # Safety
/// `matrix` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ace_matrix_nuclear_norm(
    matrix: *const AceMatrix,
    out: *mut f64,
) -> AceStatus {
    guard(AssertUnwindSafe(|| {
        if matrix.is_null() {
            return Err(null_fail("matrix"));
        }
        if out.is_null() {
            return Err(null_fail("out"));
        }
        *out = (*matrix).0.nuclear_norm().map_err(fail)?;
        Ok(())
    }))
}

/// Writes the singular values (descending) into `out`; `out_len` receives
/// the count, which is `min(rows, cols)`.
///
/// # Safety
/// `out` must hold at least `min(rows, cols)` doubles.
#[no_mangle]
pub unsafe extern "C" fn ace_matrix_singular_values(
    matrix: *const AceMatrix,
    out: *mut f64,
    out_capacity: usize,
    out_len: *mut usize,
) -> AceStatus {
    guard(AssertUnwindSafe(|| {
        if matrix.is_null() {
            return Err(null_fail("matrix"));
        }
        if out.is_null() || out_len.is_null() {
            return Err(null_fail("out"));
        }
        let m = &(*matrix).0;
        let need = m.rows().min(m.cols());
        if out_capacity < need {
            set_error(&format!("need capacity {need}, got {out_capacity}"));
            return Err(AceStatus::Shape);
        }
        let svd = m.svd(false).map_err(fail)?;
        let dst = std::slice::from_raw_parts_mut(out, need);
        dst.copy_from_slice(&svd.singular_values);
        *out_len = need;
        Ok(())
    }))
}

/// Creates a prediction batch from a row-major `num_classes x batch_size`
/// probability matrix (columns are per-sample softmax outputs) and one
/// label per sample.
///
/// # Safety
/// `probabilities` must hold `num_classes * batch_size` doubles and
/// `labels` must hold `batch_size` entries.
#[no_mangle]
pub unsafe extern "C" fn ace_batch_new(
    num_classes: usize,
    batch_size: usize,
    probabilities: *const f64,
    labels: *const usize,
    out: *mut *mut AceBatch,
) -> AceStatus {
    guard(AssertUnwindSafe(|| {
        if out.is_null() {
            return Err(null_fail("out"));
        }
        if probabilities.is_null() || labels.is_null() {
            return Err(null_fail("probabilities/labels"));
        }
        let data =
            std::slice::from_raw_parts(probabilities, num_classes.saturating_mul(batch_size));
        let labels = std::slice::from_raw_parts(labels, batch_size);
        let matrix = Matrix::new(num_classes, batch_size, data.to_vec()).map_err(fail)?;
        let batch = PredictionBatch::from_matrix(matrix, labels.to_vec()).map_err(fail)?;
        *out = Box::into_raw(Box::new(AceBatch(batch)));
        Ok(())
    }))
}

/// Releases a batch handle. NULL is a no-op.
///
/// # Safety
/// `batch` must be a handle from [`ace_batch_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ace_batch_free(batch: *mut AceBatch) {
    if !batch.is_null() {
        drop(Box::from_raw(batch));
    }
}

/// Builds the adaptive diagonal from per-class sample counts and tau.
///
/// # Safety
/// `counts` must hold `num_classes` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ace_adaptive_new(
    counts: *const usize,
    num_classes: usize,
    tau: f64,
    out: *mut *mut AceAdaptive,
) -> AceStatus {
    guard(AssertUnwindSafe(|| {
        if out.is_null() {
            return Err(null_fail("out"));
        }
        if counts.is_null() {
            return Err(null_fail("counts"));
        }
        let counts = std::slice::from_raw_parts(counts, num_classes);
        let spec = AdaptiveSpec::new(counts.to_vec(), tau).map_err(fail)?;
        let weights = AdaptiveMatrix::from_spec(&spec).map_err(fail)?;
        *out = Box::into_raw(Box::new(AceAdaptive(weights)));
        Ok(())
    }))
}

/// Releases an adaptive-diagonal handle. NULL is a no-op.
///
/// # Safety
/// `adaptive` must be a handle from [`ace_adaptive_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ace_adaptive_free(adaptive: *mut AceAdaptive) {
    if !adaptive.is_null() {
        drop(Box::from_raw(adaptive));
    }
}

/// Copies the diagonal entries into `out` (one per class).
///
/// # Safety
/// `out` must hold at least as many doubles as there are classes.
#[no_mangle]
pub unsafe extern "C" fn ace_adaptive_diag(
    adaptive: *const AceAdaptive,
    out: *mut f64,
    out_capacity: usize,
) -> AceStatus {
    guard(AssertUnwindSafe(|| {
        if adaptive.is_null() {
            return Err(null_fail("adaptive"));
        }
        if out.is_null() {
            return Err(null_fail("out"));
        }
        let diag = (*adaptive).0.diag();
        if out_capacity < diag.len() {
            set_error(&format!("need capacity {}, got {out_capacity}", diag.len()));
            return Err(AceStatus::Shape);
        }
        std::slice::from_raw_parts_mut(out, diag.len()).copy_from_slice(diag);
        Ok(())
    }))
}

fn path_of(use_svd_reference: bool) -> BcnPath {
    if use_svd_reference {
        BcnPath::SvdReference
    } else {
        BcnPath::TraceFast
    }
}

/// Batch confusion norm of the prediction batch.
///
/// # Safety
/// `batch` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ace_bcn(
    batch: *const AceBatch,
    use_svd_reference: bool,
    out: *mut f64,
) -> AceStatus {
    guard(AssertUnwindSafe(|| {
        if batch.is_null() {
            return Err(null_fail("batch"));
        }
        if out.is_null() {
            return Err(null_fail("out"));
        }
        *out = bcn(&(*batch).0, path_of(use_svd_reference)).map_err(fail)?;
        Ok(())
    }))
}

/// Adaptive confusion energy of the batch under the class weights.
///
/// # Safety
/// `batch` and `adaptive` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ace_energy_of(
    batch: *const AceBatch,
    adaptive: *const AceAdaptive,
    use_svd_reference: bool,
    out: *mut f64,
) -> AceStatus {
    guard(AssertUnwindSafe(|| {
        if batch.is_null() || adaptive.is_null() {
            return Err(null_fail("batch/adaptive"));
        }
        if out.is_null() {
            return Err(null_fail("out"));
        }
        *out = ace_energy(&(*batch).0, &(*adaptive).0, path_of(use_svd_reference)).map_err(fail)?;
        Ok(())
    }))
}

/// Learnable-variant loss: energy plus `eta` times the squared distance of
/// the diagonal from its frozen reference.
///
/// # Safety
/// `batch` and `adaptive` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ace_loss_learnable_of(
    batch: *const AceBatch,
    adaptive: *const AceAdaptive,
    eta: f64,
    use_svd_reference: bool,
    out: *mut f64,
) -> AceStatus {
    guard(AssertUnwindSafe(|| {
        if batch.is_null() || adaptive.is_null() {
            return Err(null_fail("batch/adaptive"));
        }
        if out.is_null() {
            return Err(null_fail("out"));
        }
        *out = ace_loss_learnable(&(*batch).0, &(*adaptive).0, eta, path_of(use_svd_reference))
            .map_err(fail)?;
        Ok(())
    }))
}

/// Gradient of the energy with respect to the prediction matrix, written
/// row-major into `out` (`num_classes * batch_size` doubles).
///
/// # Safety
/// `out` must hold `num_classes * batch_size` doubles.
#[no_mangle]
pub unsafe extern "C" fn ace_grad_wrt_p_of(
    batch: *const AceBatch,
    adaptive: *const AceAdaptive,
    out: *mut f64,
    out_capacity: usize,
) -> AceStatus {
    guard(AssertUnwindSafe(|| {
        if batch.is_null() || adaptive.is_null() {
            return Err(null_fail("batch/adaptive"));
        }
        if out.is_null() {
            return Err(null_fail("out"));
        }
        let grad = ace_grad_wrt_p(&(*batch).0, &(*adaptive).0).map_err(fail)?;
        write_matrix(&grad, out, out_capacity)
    }))
}

/// Gradient of the learnable loss with respect to the diagonal (one double
/// per class).
///
/// # Safety
/// `out` must hold one double per class.
#[no_mangle]
pub unsafe extern "C" fn ace_grad_wrt_ahat_of(
    batch: *const AceBatch,
    adaptive: *const AceAdaptive,
    eta: f64,
    out: *mut f64,
    out_capacity: usize,
) -> AceStatus {
    guard(AssertUnwindSafe(|| {
        if batch.is_null() || adaptive.is_null() {
            return Err(null_fail("batch/adaptive"));
        }
        if out.is_null() {
            return Err(null_fail("out"));
        }
        let grad = ace_grad_wrt_ahat(&(*batch).0, &(*adaptive).0, eta).map_err(fail)?;
        if out_capacity < grad.len() {
            set_error(&format!("need capacity {}, got {out_capacity}", grad.len()));
            return Err(AceStatus::Shape);
        }
        std::slice::from_raw_parts_mut(out, grad.len()).copy_from_slice(&grad);
        Ok(())
    }))
}

/// Gradient of the energy with respect to the logits that produced the
/// batch, written row-major into `out`.
///
/// # Safety
/// `out` must hold `num_classes * batch_size` doubles.
#[no_mangle]
pub unsafe extern "C" fn ace_grad_wrt_logits_of(
    batch: *const AceBatch,
    adaptive: *const AceAdaptive,
    out: *mut f64,
    out_capacity: usize,
) -> AceStatus {
    guard(AssertUnwindSafe(|| {
        if batch.is_null() || adaptive.is_null() {
            return Err(null_fail("batch/adaptive"));
        }
        if out.is_null() {
            return Err(null_fail("out"));
        }
        let grad = ace_grad_wrt_logits(&(*batch).0, &(*adaptive).0).map_err(fail)?;
        write_matrix(&grad, out, out_capacity)
    }))
}

unsafe fn write_matrix(m: &Matrix, out: *mut f64, out_capacity: usize) -> Result<(), AceStatus> {
    let need = m.rows() * m.cols();
    if out_capacity < need {
        set_error(&format!("need capacity {need}, got {out_capacity}"));
        return Err(AceStatus::Shape);
    }
    std::slice::from_raw_parts_mut(out, need).copy_from_slice(m.data());
    Ok(())
}
