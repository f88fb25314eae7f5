//! Test-only independent oracles. Nothing here touches the production code
//! paths it is used to check.

use crate::linalg::Matrix;

/// Textbook three-loop matrix product, used to cross-check `matmul`.
pub(crate) fn matmul_triple_loop(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.rows());
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut sum = 0.0;
            for k in 0..a.cols() {
                sum += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, sum);
        }
    }
    out
}

/// Eigenvalues of a symmetric positive semidefinite matrix, descending,
/// computed by power iteration with Hotelling deflation. Independent of the
/// Jacobi SVD path.
pub(crate) fn symmetric_psd_eigenvalues(a: &Matrix) -> Vec<f64> {
    assert_eq!(a.rows(), a.cols());
    let n = a.rows();
    let mut work = a.clone();
    let mut eigs = Vec::with_capacity(n);
    for k in 0..n {
        let (lambda, v) = dominant_eigenpair(&work, k);
        eigs.push(lambda);
        // Deflate: A <- A - lambda v v^T
        for i in 0..n {
            for j in 0..n {
                let x = work.get(i, j) - lambda * v[i] * v[j];
                work.set(i, j, x);
            }
        }
    }
    eigs.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eigs
}

fn dominant_eigenpair(a: &Matrix, salt: usize) -> (f64, Vec<f64>) {
    let n = a.rows();
    // Deterministic pseudo-random start vector so repeated eigenvalues of the
    // deflated matrices do not trap the iteration in a fixed direction.
    let mut v: Vec<f64> = (0..n)
        .map(|i| (((i + 1) * 2654435761 + salt * 40503) % 1000) as f64 / 1000.0 + 0.1)
        .collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..400_000 {
        let mut w = vec![0.0; n];
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = (0..n).map(|j| a.get(i, j) * v[j]).sum();
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            // Remaining spectrum is numerically zero.
            return (0.0, v);
        }
        for x in w.iter_mut() {
            *x /= norm;
        }
        lambda = (0..n)
            .map(|i| {
                let av: f64 = (0..n).map(|j| a.get(i, j) * w[j]).sum();
                w[i] * av
            })
            .sum();
        // Residual-based stop: ||A w - lambda w|| tracks the eigenvector
        // angle error, which deflation accuracy depends on.
        let residual: f64 = (0..n)
            .map(|i| {
                let av: f64 = (0..n).map(|j| a.get(i, j) * w[j]).sum();
                (av - lambda * w[i]).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        v = w;
        if residual <= 1e-14 * lambda.abs().max(1e-300) {
            break;
        }
    }
    (lambda, v)
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_diagonal_matrix() {
        let a = Matrix::from_rows(&[&[5.0, 0.0, 0.0], &[0.0, 2.0, 0.0], &[0.0, 0.0, 0.5]]);
        let eigs = symmetric_psd_eigenvalues(&a);
        assert!((eigs[0] - 5.0).abs() < 1e-9);
        assert!((eigs[1] - 2.0).abs() < 1e-9);
        assert!((eigs[2] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn eigenvalues_of_known_2x2() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1.
        let a = Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let eigs = symmetric_psd_eigenvalues(&a);
        assert!((eigs[0] - 3.0).abs() < 1e-9);
        assert!((eigs[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn eigenvalue_sum_is_trace() {
        let a = Matrix::from_rows(&[&[4.0, 1.0, 0.5], &[1.0, 3.0, 0.25], &[0.5, 0.25, 2.0]]);
        let eigs = symmetric_psd_eigenvalues(&a);
        let trace = 4.0 + 3.0 + 2.0;
        assert!((eigs.iter().sum::<f64>() - trace).abs() < 1e-8);
    }
}
