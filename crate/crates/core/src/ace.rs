//! Adaptive confusion energy: batch confusion norm, the per-class adaptive
//! weight matrix, the learnable variant with its proximity penalty, the
//! combined objective, and the analytic gradients used for training.
//!
//! The batch confusion norm of a batch prediction matrix P (classes x
//! samples, columns are softmax outputs) is the nuclear norm of P^T P, a
//! convex surrogate for minimizing rank(P): pushing predictions inside a
//! batch toward each other raises the training difficulty and fights
//! overfitting. Because P^T P is positive semidefinite, the sum of its
//! singular values equals its trace, which is the squared Frobenius norm of
//! P. The trace route is cheap and differentiable in closed form; the SVD
//! route is kept as an independent reference and both must agree.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Tolerance on a probability column summing to one.
pub const COLUMN_SUM_TOL: f64 = 1e-9;

/// Which route evaluates the confusion norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BcnPath {
    /// Nuclear norm of the Gram matrix via the Jacobi SVD. Reference path.
    SvdReference,
    /// Squared Frobenius norm, equal by the PSD trace identity. Default.
    #[default]
    TraceFast,
}

/// Batch prediction matrix P (C x M, column i is the softmax output of
/// sample i) together with the batch labels.
#[derive(Debug, Clone)]
pub struct PredictionBatch {
    matrix: Matrix,
    labels: Vec<usize>,
}

impl PredictionBatch {
    /// Assembles P from per-sample probability vectors, one column per
    /// sample in input order. Every vector must have the same length,
    /// entries in [0, 1], and sum to one within [`COLUMN_SUM_TOL`].
    pub fn from_softmax_outputs(outputs: &[Vec<f64>], labels: &[usize]) -> Result<Self> {
        if outputs.is_empty() {
            return Err(Error::Invalid(
                "batch must contain at least one sample".into(),
            ));
        }
        if labels.len() != outputs.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} samples",
                labels.len(),
                outputs.len()
            )));
        }
        let num_classes = outputs[0].len();
        let mut matrix = Matrix::zeros(num_classes, outputs.len());
        for (m, p) in outputs.iter().enumerate() {
            if p.len() != num_classes {
                return Err(Error::Shape(format!(
                    "sample {m} has {} classes, expected {num_classes}",
                    p.len()
                )));
            }
            for (i, &v) in p.iter().enumerate() {
                matrix.set(i, m, v);
            }
        }
        Self::from_matrix(matrix, labels.to_vec())
    }

    /// Wraps an already-assembled C x M matrix; columns are validated.
    pub fn from_matrix(matrix: Matrix, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != matrix.cols() {
            return Err(Error::Shape(format!(
                "{} labels for {} columns",
                labels.len(),
                matrix.cols()
            )));
        }
        let num_classes = matrix.rows();
        for m in 0..matrix.cols() {
            let col = matrix.column(m);
            validate_column(&col, m)?;
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self { matrix, labels })
    }

    /// The prediction matrix P (C x M).
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Number of classes C.
    pub fn num_classes(&self) -> usize {
        self.matrix.rows()
    }

    /// Batch size M.
    pub fn batch_size(&self) -> usize {
        self.matrix.cols()
    }
}

fn validate_column(p: &[f64], index: usize) -> Result<()> {
    let mut sum = 0.0;
    for &v in p {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Invalid(format!(
                "column {index} has entry {v} outside [0, 1]"
            )));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > COLUMN_SUM_TOL {
        return Err(Error::Invalid(format!(
            "column {index} sums to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Per-class sample counts and the shaping exponent tau.
#[derive(Debug, Clone)]
pub struct AdaptiveSpec {
    pub class_counts: Vec<usize>,
    pub tau: f64,
}

impl AdaptiveSpec {
    pub fn new(class_counts: Vec<usize>, tau: f64) -> Result<Self> {
        if class_counts.len() < 2 {
            return Err(Error::Invalid(
                "adaptive matrix needs at least two classes".into(),
            ));
        }
        if class_counts.iter().any(|&n| n < 1) {
            return Err(Error::Invalid(
                "every class count must be at least 1".into(),
            ));
        }
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::Invalid(format!(
                "tau must be finite and >= 0, got {tau}"
            )));
        }
        Ok(Self { class_counts, tau })
    }

    /// Mean of the class counts.
    pub fn mean(&self) -> f64 {
        let c = self.class_counts.len() as f64;
        self.class_counts.iter().map(|&n| n as f64).sum::<f64>() / c
    }

    /// Population standard deviation of the class counts.
    pub fn std_dev(&self) -> f64 {
        let mu = self.mean();
        let c = self.class_counts.len() as f64;
        (self
            .class_counts
            .iter()
            .map(|&n| (n as f64 - mu).powi(2))
            .sum::<f64>()
            / c)
            .sqrt()
    }
}

/// Diagonal class-weight matrix A with entries (N_i / mu)^(sigma^tau),
/// plus the frozen hand-crafted reference used by the proximity penalty of
/// the learnable variant.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveMatrix {
    diag: Vec<f64>,
    frozen_reference: Vec<f64>,
}

impl AdaptiveMatrix {
    /// Builds A from class counts. Balanced counts (sigma = 0) produce the
    /// identity exactly, for every tau: the exponent convention is
    /// sigma^tau = 1 when sigma = 0 and tau = 0, and 0 otherwise, but the
    /// base N_i / mu is 1 in both cases.
    pub fn from_spec(spec: &AdaptiveSpec) -> Result<Self> {
        // Re-validate so a hand-constructed spec cannot smuggle bad counts.
        let spec = AdaptiveSpec::new(spec.class_counts.clone(), spec.tau)?;
        let mu = spec.mean();
        let sigma = spec.std_dev();
        let diag: Vec<f64> = if sigma == 0.0 {
            vec![1.0; spec.class_counts.len()]
        } else {
            let exponent = sigma.powf(spec.tau);
            spec.class_counts
                .iter()
                .map(|&n| (n as f64 / mu).powf(exponent))
                .collect()
        };
        Ok(Self {
            frozen_reference: diag.clone(),
            diag,
        })
    }

    /// Identity weights for C classes (the balanced-data limit).
    pub fn identity(num_classes: usize) -> Self {
        Self {
            diag: vec![1.0; num_classes],
            frozen_reference: vec![1.0; num_classes],
        }
    }

    /// Current diagonal entries a_i (the learnable state when training).
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// The hand-crafted reference diagonal the proximity term pulls toward.
    pub fn frozen_reference(&self) -> &[f64] {
        &self.frozen_reference
    }

    pub fn num_classes(&self) -> usize {
        self.diag.len()
    }

    /// Applies an in-place additive update to the learnable diagonal.
    /// The training loop is responsible for flooring the result (see
    /// [`AdaptiveMatrix::floor_diag`]).
    pub fn update_diag(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.diag.len() {
            return Err(Error::Shape(format!(
                "update length {} for {} diagonal entries",
                delta.len(),
                self.diag.len()
            )));
        }
        for (a, d) in self.diag.iter_mut().zip(delta) {
            *a += d;
        }
        Ok(())
    }

    /// Floors every diagonal entry at `min`, keeping the learnable weights
    /// strictly positive across optimizer steps.
    pub fn floor_diag(&mut self, min: f64) {
        for a in self.diag.iter_mut() {
            if *a < min {
                *a = min;
            }
        }
    }

    /// Squared elementwise l2 distance to the frozen reference.
    pub fn proximity_sq(&self) -> f64 {
        self.diag
            .iter()
            .zip(&self.frozen_reference)
            .map(|(a, r)| (a - r) * (a - r))
            .sum()
    }
}

/// Knobs of the combined objective.
#[derive(Debug, Clone)]
pub struct LossConfig {
    pub lambda: f64,
    pub eta: f64,
    pub learnable: bool,
    pub bcn_path: BcnPath,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            eta: 1.0,
            learnable: false,
            bcn_path: BcnPath::TraceFast,
        }
    }
}

impl LossConfig {
    pub fn new(lambda: f64, eta: f64, learnable: bool, bcn_path: BcnPath) -> Result<Self> {
        for (name, v) in [("lambda", lambda), ("eta", eta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(Self {
            lambda,
            eta,
            learnable,
            bcn_path,
        })
    }

    /// The confusion term this configuration selects: the plain energy, or
    /// the learnable-variant loss with its proximity penalty.
    pub fn ace_term(&self, batch: &PredictionBatch, weights: &AdaptiveMatrix) -> Result<f64> {
        if self.learnable {
            ace_loss_learnable(batch, weights, self.eta, self.bcn_path)
        } else {
            ace_energy(batch, weights, self.bcn_path)
        }
    }

    /// Combined objective under this configuration.
    pub fn total(&self, ce: f64, ace: f64) -> f64 {
        total_loss(ce, ace, self.lambda)
    }
}

/// Batch confusion norm: the nuclear norm of P^T P on the reference path,
/// or the squared Frobenius norm of P on the fast path.
pub fn bcn(batch: &PredictionBatch, path: BcnPath) -> Result<f64> {
    match path {
        BcnPath::SvdReference => {
            let p = batch.matrix();
            p.transpose().matmul(p)?.nuclear_norm()
        }
        BcnPath::TraceFast => Ok(batch.matrix().frobenius_norm_sq()),
    }
}

/// Adaptive confusion energy: the batch confusion norm of A P, i.e. the
/// nuclear norm of (AP)^T (AP), with the fast path evaluating
/// sum_i a_i^2 sum_m P_im^2.
pub fn ace_energy(batch: &PredictionBatch, weights: &AdaptiveMatrix, path: BcnPath) -> Result<f64> {
    if weights.num_classes() != batch.num_classes() {
        return Err(Error::Shape(format!(
            "adaptive matrix has {} classes, batch has {}",
            weights.num_classes(),
            batch.num_classes()
        )));
    }
    let weighted = batch.matrix().scale_rows(weights.diag())?;
    match path {
        BcnPath::SvdReference => weighted.transpose().matmul(&weighted)?.nuclear_norm(),
        BcnPath::TraceFast => Ok(weighted.frobenius_norm_sq()),
    }
}

/// Learnable-variant loss: ace_energy under the current diagonal plus
/// eta times the squared elementwise distance to the frozen reference.
pub fn ace_loss_learnable(
    batch: &PredictionBatch,
    weights: &AdaptiveMatrix,
    eta: f64,
    path: BcnPath,
) -> Result<f64> {
    Ok(ace_energy(batch, weights, path)? + eta * weights.proximity_sq())
}

/// Combined objective: cross-entropy plus lambda times the confusion term.
pub fn total_loss(ce: f64, ace: f64, lambda: f64) -> f64 {
    ce + lambda * ace
}

/// Gradient of the (fast-path) adaptive confusion energy with respect to P:
/// G_im = 2 a_i^2 P_im.
pub fn ace_grad_wrt_p(batch: &PredictionBatch, weights: &AdaptiveMatrix) -> Result<Matrix> {
    if weights.num_classes() != batch.num_classes() {
        return Err(Error::Shape(format!(
            "adaptive matrix has {} classes, batch has {}",
            weights.num_classes(),
            batch.num_classes()
        )));
    }
    let squared: Vec<f64> = weights.diag().iter().map(|a| 2.0 * a * a).collect();
    batch.matrix().scale_rows(&squared)
}

/// Gradient of the learnable-variant loss with respect to the diagonal:
/// g_i = 2 a_i sum_m P_im^2 + 2 eta (a_i - ref_i).
pub fn ace_grad_wrt_ahat(
    batch: &PredictionBatch,
    weights: &AdaptiveMatrix,
    eta: f64,
) -> Result<Vec<f64>> {
    if weights.num_classes() != batch.num_classes() {
        return Err(Error::Shape(format!(
            "adaptive matrix has {} classes, batch has {}",
            weights.num_classes(),
            batch.num_classes()
        )));
    }
    let p = batch.matrix();
    let row_power: Vec<f64> = (0..p.rows())
        .map(|i| p.row(i).iter().map(|x| x * x).sum::<f64>())
        .collect();
    Ok(weights
        .diag()
        .iter()
        .zip(weights.frozen_reference())
        .zip(&row_power)
        .map(|((a, r), s)| 2.0 * a * s + 2.0 * eta * (a - r))
        .collect())
}

/// Chain rule through the softmax: for each column m,
/// dL/dz_m = (diag(p_m) - p_m p_m^T) g_m with g_m the matching column of
/// [`ace_grad_wrt_p`].
pub fn ace_grad_wrt_logits(batch: &PredictionBatch, weights: &AdaptiveMatrix) -> Result<Matrix> {
    let grad_p = ace_grad_wrt_p(batch, weights)?;
    softmax_jacobian_apply(batch.matrix(), &grad_p)
}

/// Applies the softmax Jacobian of each column of `probs` to the matching
/// column of `grad`: out_im = p_im (g_im - p_m . g_m).
pub fn softmax_jacobian_apply(probs: &Matrix, grad: &Matrix) -> Result<Matrix> {
    if probs.rows() != grad.rows() || probs.cols() != grad.cols() {
        return Err(Error::Shape(format!(
            "probabilities {}x{} vs gradient {}x{}",
            probs.rows(),
            probs.cols(),
            grad.rows(),
            grad.cols()
        )));
    }
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for m in 0..probs.cols() {
        let mut dot = 0.0;
        for i in 0..probs.rows() {
            dot += probs.get(i, m) * grad.get(i, m);
        }
        for i in 0..probs.rows() {
            let p = probs.get(i, m);
            out.set(i, m, p * (grad.get(i, m) - dot));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_hot(c: usize, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; c];
        v[k] = 1.0;
        v
    }

    fn uniform(c: usize) -> Vec<f64> {
        vec![1.0 / c as f64; c]
    }

    pub(crate) fn random_batch(rng: &mut ChaCha8Rng, c: usize, m: usize) -> PredictionBatch {
        let cols: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.01..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / sum).collect()
            })
            .collect();
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..c)).collect();
        PredictionBatch::from_softmax_outputs(&cols, &labels).unwrap()
    }

    fn random_weights(rng: &mut ChaCha8Rng, c: usize) -> AdaptiveMatrix {
        let counts: Vec<usize> = (0..c).map(|_| rng.random_range(10..200)).collect();
        AdaptiveMatrix::from_spec(&AdaptiveSpec::new(counts, 0.1).unwrap()).unwrap()
    }

    // -- assembly --

    #[test]
    fn assemble_one_hot_columns() {
        let batch = PredictionBatch::from_softmax_outputs(&[one_hot(3, 0), one_hot(3, 1)], &[0, 1])
            .unwrap();
        let expected = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(batch.matrix(), &expected);
    }

    #[test]
    fn assemble_single_column() {
        let batch = PredictionBatch::from_softmax_outputs(&[uniform(4)], &[2]).unwrap();
        assert_eq!(batch.batch_size(), 1);
        assert_eq!(batch.num_classes(), 4);
    }

    #[test]
    fn assemble_preserves_columns_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cols: Vec<Vec<f64>> = (0..5)
            .map(|_| {
                let raw: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / sum).collect()
            })
            .collect();
        let batch = PredictionBatch::from_softmax_outputs(&cols, &[0, 1, 2, 3, 4]).unwrap();
        for (m, col) in cols.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                assert_eq!(batch.matrix().get(i, m), v);
            }
        }
    }

    #[test]
    fn assemble_rejects_bad_input() {
        // Ragged lengths.
        assert!(
            PredictionBatch::from_softmax_outputs(&[one_hot(3, 0), one_hot(4, 0)], &[0, 0])
                .is_err()
        );
        // Not normalized.
        assert!(PredictionBatch::from_softmax_outputs(&[vec![0.5, 0.4]], &[0]).is_err());
        // Out-of-range label.
        assert!(PredictionBatch::from_softmax_outputs(&[one_hot(3, 0)], &[5]).is_err());
    }

    // -- adaptive matrix --

    #[test]
    fn balanced_counts_give_exact_identity() {
        for tau in [0.0, 0.1, 1.0, 3.5] {
            let spec = AdaptiveSpec::new(vec![20, 20, 20], tau).unwrap();
            let a = AdaptiveMatrix::from_spec(&spec).unwrap();
            assert_eq!(a.diag(), &[1.0, 1.0, 1.0]);
        }
    }

    #[test]
    fn tau_zero_reduces_to_count_over_mean() {
        let spec = AdaptiveSpec::new(vec![30, 20, 10], 0.0).unwrap();
        let a = AdaptiveMatrix::from_spec(&spec).unwrap();
        assert_eq!(a.diag(), &[1.5, 1.0, 0.5]);
    }

    #[test]
    fn tau_shapes_exponent_via_sigma() {
        // counts [30, 20, 10], tau = 0.1: sigma = sqrt(200/3), exponent
        // sigma^0.1 = 1.2336598..., frozen via a 30-digit calculation.
        let spec = AdaptiveSpec::new(vec![30, 20, 10], 0.1).unwrap();
        let a = AdaptiveMatrix::from_spec(&spec).unwrap();
        let expected = [1.649060994716035, 1.0, 0.425237322777402];
        for (got, want) in a.diag().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn head_entries_exceed_one_and_tail_fall_below() {
        let counts: Vec<usize> = (0..10)
            .map(|i| (500.0 * 100.0_f64.powf(-(i as f64) / 9.0)).round() as usize)
            .collect();
        let spec = AdaptiveSpec::new(counts.clone(), 0.1).unwrap();
        let mu = spec.mean();
        let a = AdaptiveMatrix::from_spec(&spec).unwrap();
        for w in a.diag().windows(2) {
            assert!(w[0] >= w[1], "diagonal must be non-increasing");
        }
        for (i, &n) in counts.iter().enumerate() {
            if (n as f64) > mu {
                assert!(a.diag()[i] > 1.0);
            }
            if (n as f64) < mu {
                assert!(a.diag()[i] < 1.0);
            }
        }
    }

    #[test]
    fn spec_rejects_invalid_counts() {
        assert!(AdaptiveSpec::new(vec![5], 0.0).is_err());
        assert!(AdaptiveSpec::new(vec![5, 0], 0.0).is_err());
        assert!(AdaptiveSpec::new(vec![5, 5], -0.5).is_err());
    }

    // -- confusion norms --

    #[test]
    fn bcn_of_distinct_one_hots_is_batch_size() {
        let cols: Vec<Vec<f64>> = (0..4).map(|k| one_hot(6, k)).collect();
        let batch = PredictionBatch::from_softmax_outputs(&cols, &[0, 1, 2, 3]).unwrap();
        for path in [BcnPath::SvdReference, BcnPath::TraceFast] {
            assert!((bcn(&batch, path).unwrap() - 4.0).abs() < 1e-10);
        }
    }

    #[test]
    fn bcn_of_uniform_columns_is_m_over_c() {
        let cols: Vec<Vec<f64>> = (0..3).map(|_| uniform(6)).collect();
        let batch = PredictionBatch::from_softmax_outputs(&cols, &[0, 1, 2]).unwrap();
        for path in [BcnPath::SvdReference, BcnPath::TraceFast] {
            assert!((bcn(&batch, path).unwrap() - 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn bcn_paths_agree_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = random_batch(&mut rng, 6, 4);
        let reference = bcn(&batch, BcnPath::SvdReference).unwrap();
        let fast = bcn(&batch, BcnPath::TraceFast).unwrap();
        assert!((reference - fast).abs() <= 1e-10 * fast.max(1.0));
    }

    #[test]
    fn bcn_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let c = rng.random_range(2..16);
            let m = rng.random_range(1..12);
            let batch = random_batch(&mut rng, c, m);
            let v = bcn(&batch, BcnPath::TraceFast).unwrap();
            let lo = m as f64 / c as f64;
            assert!(
                v >= lo - 1e-12 && v <= m as f64 + 1e-12,
                "{v} outside [{lo}, {m}]"
            );
        }
    }

    // -- ace energy --

    #[test]
    fn identity_weights_reduce_to_bcn() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = random_batch(&mut rng, 5, 3);
        let id = AdaptiveMatrix::identity(5);
        let energy = ace_energy(&batch, &id, BcnPath::TraceFast).unwrap();
        assert_eq!(energy, bcn(&batch, BcnPath::TraceFast).unwrap());
    }

    #[test]
    fn single_one_hot_column_costs_squared_weight() {
        let batch = PredictionBatch::from_softmax_outputs(&[one_hot(4, 2)], &[2]).unwrap();
        let spec = AdaptiveSpec::new(vec![40, 30, 20, 10], 0.0).unwrap();
        let a = AdaptiveMatrix::from_spec(&spec).unwrap();
        let expected = a.diag()[2] * a.diag()[2];
        for path in [BcnPath::SvdReference, BcnPath::TraceFast] {
            assert!((ace_energy(&batch, &a, path).unwrap() - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn ace_energy_matches_gram_eigenvalue_oracle() {
        // The energy is the nuclear norm of the PSD Gram matrix (AP)^T (AP),
        // which equals the sum of its eigenvalues.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = random_batch(&mut rng, 7, 4);
        let a = random_weights(&mut rng, 7);
        let weighted = batch.matrix().scale_rows(a.diag()).unwrap();
        let gram = weighted.transpose().matmul(&weighted).unwrap();
        let expected: f64 = oracles::symmetric_psd_eigenvalues(&gram)
            .iter()
            .map(|l| l.max(0.0))
            .sum();
        let got = ace_energy(&batch, &a, BcnPath::SvdReference).unwrap();
        assert!((got - expected).abs() <= 1e-8 * expected.max(1.0));
    }

    #[test]
    fn ace_energy_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let c = rng.random_range(2..12);
            let m = rng.random_range(1..10);
            let batch = random_batch(&mut rng, c, m);
            let a = random_weights(&mut rng, c);
            let fast = ace_energy(&batch, &a, BcnPath::TraceFast).unwrap();
            let reference = ace_energy(&batch, &a, BcnPath::SvdReference).unwrap();
            assert!((fast - reference).abs() <= 1e-8 * fast.max(1.0));
        }
    }

    #[test]
    fn ace_energy_rejects_mismatched_weights() {
        let batch = PredictionBatch::from_softmax_outputs(&[uniform(3)], &[0]).unwrap();
        let a = AdaptiveMatrix::identity(4);
        assert!(matches!(
            ace_energy(&batch, &a, BcnPath::TraceFast),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn ace_energy_invariant_under_column_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch = random_batch(&mut rng, 5, 4);
        let a = random_weights(&mut rng, 5);
        let base = ace_energy(&batch, &a, BcnPath::TraceFast).unwrap();

        let perm = [2usize, 0, 3, 1];
        let cols: Vec<Vec<f64>> = perm.iter().map(|&m| batch.matrix().column(m)).collect();
        let labels: Vec<usize> = perm.iter().map(|&m| batch.labels()[m]).collect();
        let permuted = PredictionBatch::from_softmax_outputs(&cols, &labels).unwrap();
        let permuted_energy = ace_energy(&permuted, &a, BcnPath::TraceFast).unwrap();
        assert!((base - permuted_energy).abs() < 1e-12);

        // Gradient columns permute identically.
        let g = ace_grad_wrt_p(&batch, &a).unwrap();
        let gp = ace_grad_wrt_p(&permuted, &a).unwrap();
        for (out_m, &src_m) in perm.iter().enumerate() {
            for i in 0..5 {
                assert_eq!(gp.get(i, out_m), g.get(i, src_m));
            }
        }
    }

    // -- learnable variant --

    #[test]
    fn learnable_loss_reduces_to_energy_at_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = random_batch(&mut rng, 5, 3);
        let a = random_weights(&mut rng, 5);
        let loss = ace_loss_learnable(&batch, &a, 2.5, BcnPath::TraceFast).unwrap();
        let energy = ace_energy(&batch, &a, BcnPath::TraceFast).unwrap();
        assert_eq!(loss, energy);
    }

    #[test]
    fn uniform_batch_identity_weights_gives_m_over_c() {
        let cols: Vec<Vec<f64>> = (0..3).map(|_| uniform(6)).collect();
        let batch = PredictionBatch::from_softmax_outputs(&cols, &[0, 1, 2]).unwrap();
        let id = AdaptiveMatrix::identity(6);
        let loss = ace_loss_learnable(&batch, &id, 1.0, BcnPath::TraceFast).unwrap();
        assert!((loss - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perturbed_diagonal_pays_squared_proximity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = random_batch(&mut rng, 5, 3);
        let a = random_weights(&mut rng, 5);
        let mut nudged = a.clone();
        nudged.update_diag(&[0.1, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let loss = ace_loss_learnable(&batch, &nudged, 1.0, BcnPath::TraceFast).unwrap();
        let energy = ace_energy(&batch, &nudged, BcnPath::TraceFast).unwrap();
        assert!((loss - (energy + 0.01)).abs() < 1e-12);
    }

    // -- total loss --

    #[test]
    fn total_loss_composition() {
        assert_eq!(total_loss(0.7, 5.0, 0.0), 0.7);
        assert_eq!(total_loss(0.5, 0.2, 10.0), 2.5);
        // Natural-world regime shape: lambda 2.0 composes the same way.
        assert_eq!(total_loss(1.0, 0.25, 2.0), 1.5);
    }

    #[test]
    fn loss_config_validates_and_selects_terms() {
        assert!(LossConfig::new(-1.0, 1.0, false, BcnPath::TraceFast).is_err());
        assert!(LossConfig::new(1.0, f64::NAN, false, BcnPath::TraceFast).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let batch = random_batch(&mut rng, 5, 3);
        let mut weights = random_weights(&mut rng, 5);
        weights.update_diag(&[0.2, 0.0, 0.0, 0.0, 0.0]).unwrap();

        let plain = LossConfig::new(3.0, 9.0, false, BcnPath::TraceFast).unwrap();
        assert_eq!(
            plain.ace_term(&batch, &weights).unwrap(),
            ace_energy(&batch, &weights, BcnPath::TraceFast).unwrap()
        );
        let learnable = LossConfig::new(3.0, 9.0, true, BcnPath::TraceFast).unwrap();
        assert_eq!(
            learnable.ace_term(&batch, &weights).unwrap(),
            ace_loss_learnable(&batch, &weights, 9.0, BcnPath::TraceFast).unwrap()
        );
        assert_eq!(plain.total(0.5, 0.1), 0.8);
    }

    // -- gradients (hand cases; finite differences live in gradcheck) --

    #[test]
    fn grad_wrt_p_uniform_identity_case() {
        let cols: Vec<Vec<f64>> = (0..4).map(|_| uniform(5)).collect();
        let batch = PredictionBatch::from_softmax_outputs(&cols, &[0, 1, 2, 3]).unwrap();
        let id = AdaptiveMatrix::identity(5);
        let g = ace_grad_wrt_p(&batch, &id).unwrap();
        for i in 0..5 {
            for m in 0..4 {
                assert!((g.get(i, m) - 0.4).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn grad_wrt_p_zero_rows_give_zero_gradient() {
        let batch = PredictionBatch::from_softmax_outputs(&[one_hot(3, 0), one_hot(3, 0)], &[0, 0])
            .unwrap();
        let id = AdaptiveMatrix::identity(3);
        let g = ace_grad_wrt_p(&batch, &id).unwrap();
        for m in 0..2 {
            assert_eq!(g.get(1, m), 0.0);
            assert_eq!(g.get(2, m), 0.0);
        }
    }

    #[test]
    fn grad_wrt_ahat_at_reference_drops_proximity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let batch = random_batch(&mut rng, 4, 3);
        let a = random_weights(&mut rng, 4);
        let g = ace_grad_wrt_ahat(&batch, &a, 123.0).unwrap();
        let p = batch.matrix();
        for (i, gi) in g.iter().enumerate() {
            let row_power: f64 = p.row(i).iter().map(|x| x * x).sum();
            assert!((gi - 2.0 * a.diag()[i] * row_power).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_wrt_ahat_zero_row_leaves_proximity_only() {
        let batch = PredictionBatch::from_softmax_outputs(&[one_hot(3, 0)], &[0]).unwrap();
        let spec = AdaptiveSpec::new(vec![30, 20, 10], 0.0).unwrap();
        let mut a = AdaptiveMatrix::from_spec(&spec).unwrap();
        a.update_diag(&[0.0, 0.25, -0.25]).unwrap();
        let eta = 1.5;
        let g = ace_grad_wrt_ahat(&batch, &a, eta).unwrap();
        // Rows 1 and 2 of P are all zero.
        assert!((g[1] - 2.0 * eta * 0.25).abs() < 1e-12);
        assert!((g[2] - 2.0 * eta * -0.25).abs() < 1e-12);
    }

    #[test]
    fn logit_grad_vanishes_for_uniform_and_saturated_columns() {
        let id = AdaptiveMatrix::identity(4);
        let batch = PredictionBatch::from_softmax_outputs(&[uniform(4)], &[0]).unwrap();
        let g = ace_grad_wrt_logits(&batch, &id).unwrap();
        for i in 0..4 {
            assert!(g.get(i, 0).abs() < 1e-15);
        }
        let saturated = PredictionBatch::from_softmax_outputs(&[one_hot(4, 1)], &[1]).unwrap();
        let g = ace_grad_wrt_logits(&saturated, &id).unwrap();
        for i in 0..4 {
            assert!(g.get(i, 0).abs() < 1e-15);
        }
    }
}
