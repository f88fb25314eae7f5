//! Minimal dense linear algebra: a row-major matrix type, products, norms,
//! and a one-sided Jacobi singular value decomposition.
//!
//! Everything is double precision and sized for batch-level work (a few
//! hundred rows or columns at most), so the implementation favors clarity
//! and testability over throughput. Matrices are immutable value types and
//! all operations are pure functions.

use crate::error::{Error, Result};

/// Relative off-diagonal threshold below which a Jacobi rotation is skipped.
const JACOBI_REL_TOL: f64 = 1e-12;

/// Sweep budget for the one-sided Jacobi iteration. Converges comfortably
/// for matrices up to 512x512.
const JACOBI_MAX_SWEEPS: usize = 60;

/// Dense real matrix in row-major order: `data[i * cols + j] = A[i, j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Creates a matrix from row-major data, validating length and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Invalid(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite entry {} at flat index {bad}",
                data[bad]
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Creates a matrix from row slices. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        assert!(!rows.is_empty(), "must have at least one row");
        let cols = rows[0].len();
        assert!(cols > 0, "must have at least one column");
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), cols, "row {i} has inconsistent length");
            data.extend_from_slice(row);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// Zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Column vector from a slice.
    pub fn from_column(v: &[f64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    /// Row `i` as a contiguous slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let start = i * self.cols;
        &self.data[start..start + self.cols]
    }

    /// Column `j` copied out.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Raw row-major data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable raw row-major data.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        // i-k-j order for row-major cache friendliness
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a_ik = self.data[i * self.cols + k];
                if a_ik == 0.0 {
                    continue;
                }
                let out_row = i * other.cols;
                let b_row = k * other.cols;
                for j in 0..other.cols {
                    out.data[out_row + j] += a_ik * other.data[b_row + j];
                }
            }
        }
        Ok(out)
    }

    /// Transpose.
    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Sum of squared entries.
    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Scalar multiple.
    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| c * x).collect(),
        }
    }

    /// Left-multiplies by a diagonal matrix: row `i` scaled by `diag[i]`.
    pub fn scale_rows(&self, diag: &[f64]) -> Result<Matrix> {
        if diag.len() != self.rows {
            return Err(Error::Shape(format!(
                "diagonal length {} does not match {} rows",
                diag.len(),
                self.rows
            )));
        }
        let mut out = self.clone();
        for (i, &d) in diag.iter().enumerate() {
            for j in 0..self.cols {
                out.data[i * self.cols + j] *= d;
            }
        }
        Ok(out)
    }

    /// Singular value decomposition via one-sided Jacobi rotations.
    ///
    /// Singular values come back sorted descending. When `want_vectors` is
    /// set, `left_vectors` (rows x k) and `right_vectors` (cols x k) satisfy
    /// `U * diag(S) * V^T = self` with k = min(rows, cols).
    ///
    /// # Errors
    /// Returns a numerical error carrying the largest relative off-diagonal
    /// residual if the iteration has not converged after the sweep budget.
    pub fn svd(&self, want_vectors: bool) -> Result<SvdResult> {
        if let Some(bad) = self.data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!(
                "svd input has non-finite entry at flat index {bad}"
            )));
        }
        if self.rows >= self.cols {
            jacobi_svd_tall(self, want_vectors)
        } else {
            // A = U S V^T exactly when A^T = V S U^T.
            let swapped = jacobi_svd_tall(&self.transpose(), want_vectors)?;
            Ok(SvdResult {
                singular_values: swapped.singular_values,
                left_vectors: swapped.right_vectors,
                right_vectors: swapped.left_vectors,
            })
        }
    }

    /// Sum of singular values.
    pub fn nuclear_norm(&self) -> Result<f64> {
        Ok(self.svd(false)?.singular_values.iter().sum())
    }
}

/// Result of [`Matrix::svd`]: singular values sorted descending, plus the
/// singular vectors when requested.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub singular_values: Vec<f64>,
    pub left_vectors: Option<Matrix>,
    pub right_vectors: Option<Matrix>,
}

/// One-sided Jacobi on a tall (rows >= cols) matrix: orthogonalize columns
/// by plane rotations until every column pair is numerically orthogonal.
fn jacobi_svd_tall(a: &Matrix, want_vectors: bool) -> Result<SvdResult> {
    let m = a.rows;
    let n = a.cols;
    let mut work = a.clone();
    let mut v = Matrix::identity(n);

    let mut converged = false;
    let mut worst_rel = 0.0_f64;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        worst_rel = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    let ap = work.data[i * n + p];
                    let aq = work.data[i * n + q];
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                if alpha == 0.0 || beta == 0.0 || gamma == 0.0 {
                    continue;
                }
                let rel = gamma.abs() / (alpha * beta).sqrt();
                worst_rel = worst_rel.max(rel);
                if rel <= JACOBI_REL_TOL {
                    continue;
                }
                // Rotation angle that zeroes the (p, q) Gram entry.
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let ap = work.data[i * n + p];
                    let aq = work.data[i * n + q];
                    work.data[i * n + p] = c * ap - s * aq;
                    work.data[i * n + q] = s * ap + c * aq;
                }
                for i in 0..n {
                    let vp = v.data[i * n + p];
                    let vq = v.data[i * n + q];
                    v.data[i * n + p] = c * vp - s * vq;
                    v.data[i * n + q] = s * vp + c * vq;
                }
                rotated = true;
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "jacobi svd did not converge in {JACOBI_MAX_SWEEPS} sweeps \
             (worst relative off-diagonal {worst_rel:.3e})"
        )));
    }

    // Column norms are the singular values; normalized columns form U.
    let norms: Vec<f64> = (0..n)
        .map(|j| {
            (0..m)
                .map(|i| work.data[i * n + j].powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap());

    let singular_values: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    if !want_vectors {
        return Ok(SvdResult {
            singular_values,
            left_vectors: None,
            right_vectors: None,
        });
    }

    let mut u = Matrix::zeros(m, n);
    let mut right = Matrix::zeros(n, n);
    for (out_j, &src_j) in order.iter().enumerate() {
        let s = norms[src_j];
        if s > 0.0 {
            for i in 0..m {
                u.data[i * n + out_j] = work.data[i * n + src_j] / s;
            }
        }
        // A zero singular value leaves a zero U column; reconstruction is
        // unaffected because the column is multiplied by s = 0.
        for i in 0..n {
            right.data[i * n + out_j] = v.data[i * n + src_j];
        }
    }
    Ok(SvdResult {
        singular_values,
        left_vectors: Some(u),
        right_vectors: Some(right),
    })
}
