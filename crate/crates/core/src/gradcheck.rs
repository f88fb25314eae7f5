//! Central finite-difference verification of every analytic gradient:
//! the confusion-energy gradients with respect to the prediction matrix,
//! the learnable diagonal, and the logits, plus the full model backward
//! pass under the combined objective.
//!
//! Reported error is relative to the infinity norm of the numerical
//! gradient, so near-zero entries do not blow up the ratio while any real
//! formula mistake still lands far above the tolerance.

use crate::ace::{
    ace_energy, ace_grad_wrt_ahat, ace_grad_wrt_logits, ace_grad_wrt_p, ace_loss_learnable,
    total_loss, AdaptiveMatrix, AdaptiveSpec, BcnPath, PredictionBatch,
};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::model::{cross_entropy, softmax_columns, Architecture, ModelParams};
use crate::seed::stream_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-6;

/// Maximum acceptable relative error for any gradient family.
pub const GRAD_TOL: f64 = 1e-5;

/// Worst-case relative error observed for one gradient family.
#[derive(Debug, Clone)]
pub struct FamilyResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub families: Vec<FamilyResult>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.families
            .iter()
            .map(|f| f.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= GRAD_TOL
    }
}

/// Central difference gradient of `f` at `x`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = f(&probe);
        probe[i] = x[i] - step;
        let minus = f(&probe);
        probe[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric
        .iter()
        .map(|x| x.abs())
        .fold(0.0_f64, f64::max)
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0_f64, f64::max)
        / scale
}

fn random_batch(rng: &mut ChaCha8Rng, c: usize, m: usize) -> PredictionBatch {
    let cols: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / sum).collect()
        })
        .collect();
    let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..c)).collect();
    PredictionBatch::from_softmax_outputs(&cols, &labels).unwrap()
}

fn random_weights(rng: &mut ChaCha8Rng, c: usize) -> AdaptiveMatrix {
    let counts: Vec<usize> = (0..c).map(|_| rng.random_range(2..200)).collect();
    AdaptiveMatrix::from_spec(&AdaptiveSpec::new(counts, 0.1).unwrap()).unwrap()
}

/// Trial sizes. Trial 0 always uses a single-sample batch so the M = 1 path
/// is exercised.
fn trial_dims(rng: &mut ChaCha8Rng, trial: usize) -> (usize, usize) {
    let c = rng.random_range(2..10);
    let m = if trial == 0 {
        1
    } else {
        rng.random_range(1..8)
    };
    (c, m)
}

fn check_grad_wrt_p(rng: &mut ChaCha8Rng, trials: usize) -> f64 {
    let mut worst = 0.0_f64;
    for trial in 0..trials {
        let (c, m) = trial_dims(rng, trial);
        let batch = random_batch(rng, c, m);
        let weights = random_weights(rng, c);
        let analytic = ace_grad_wrt_p(&batch, &weights).unwrap();

        // The energy extends smoothly off the probability simplex, so the
        // matrix entries can be perturbed freely.
        let diag = weights.diag().to_vec();
        let mut f = |flat: &[f64]| {
            let p = Matrix::new(c, m, flat.to_vec()).unwrap();
            p.scale_rows(&diag).unwrap().frobenius_norm_sq()
        };
        let numeric = central_difference(&mut f, batch.matrix().data(), FD_STEP);
        worst = worst.max(rel_error(analytic.data(), &numeric));
    }
    worst
}

fn check_grad_wrt_ahat(rng: &mut ChaCha8Rng, trials: usize) -> f64 {
    let mut worst = 0.0_f64;
    for trial in 0..trials {
        let (c, m) = trial_dims(rng, trial);
        let batch = random_batch(rng, c, m);
        let mut weights = random_weights(rng, c);
        // Move off the reference so the proximity term is active.
        let nudge: Vec<f64> = (0..c).map(|_| rng.random_range(-0.2..0.2)).collect();
        weights.update_diag(&nudge).unwrap();
        let eta = rng.random_range(0.0..3.0);
        let analytic = ace_grad_wrt_ahat(&batch, &weights, eta).unwrap();

        let base = weights.clone();
        let mut f = |diag: &[f64]| {
            let mut probe = base.clone();
            let delta: Vec<f64> = diag
                .iter()
                .zip(base.diag())
                .map(|(new, old)| new - old)
                .collect();
            probe.update_diag(&delta).unwrap();
            ace_loss_learnable(&batch, &probe, eta, BcnPath::TraceFast).unwrap()
        };
        let numeric = central_difference(&mut f, weights.diag(), FD_STEP);
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

fn check_grad_wrt_logits(rng: &mut ChaCha8Rng, trials: usize) -> f64 {
    let mut worst = 0.0_f64;
    for trial in 0..trials {
        let (c, m) = trial_dims(rng, trial);
        let weights = random_weights(rng, c);
        let logits: Vec<f64> = (0..c * m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let logit_mat = Matrix::new(c, m, logits.clone()).unwrap();
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..c)).collect();

        let probs = softmax_columns(&logit_mat);
        let batch = PredictionBatch::from_matrix(probs, labels.clone()).unwrap();
        let analytic = ace_grad_wrt_logits(&batch, &weights).unwrap();

        let mut f = |flat: &[f64]| {
            let z = Matrix::new(c, m, flat.to_vec()).unwrap();
            let p = PredictionBatch::from_matrix(softmax_columns(&z), labels.clone()).unwrap();
            ace_energy(&p, &weights, BcnPath::TraceFast).unwrap()
        };
        let numeric = central_difference(&mut f, &logits, FD_STEP);
        worst = worst.max(rel_error(analytic.data(), &numeric));
    }
    worst
}

fn flat_params(model: &ModelParams) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in model.layers() {
        out.extend_from_slice(layer.weights.data());
        out.extend_from_slice(&layer.biases);
    }
    out
}

fn flat_grads(grads: &crate::model::ParamGrads) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in &grads.layers {
        out.extend_from_slice(layer.weights.data());
        out.extend_from_slice(&layer.biases);
    }
    out
}

fn with_flat_params(template: &ModelParams, flat: &[f64]) -> ModelParams {
    let mut model = template.clone();
    let mut offset = 0;
    for layer in model.layers_mut() {
        let (rows, cols) = (layer.weights.rows(), layer.weights.cols());
        let n = rows * cols;
        layer.weights = Matrix::new(rows, cols, flat[offset..offset + n].to_vec()).unwrap();
        offset += n;
        let b = layer.biases.len();
        layer.biases = flat[offset..offset + b].to_vec();
        offset += b;
    }
    model
}

fn check_model_backward(rng: &mut ChaCha8Rng, trials: usize) -> f64 {
    let mut worst = 0.0_f64;
    for trial in 0..trials {
        let c = rng.random_range(2..6);
        let m = if trial == 0 {
            1
        } else {
            rng.random_range(2..6)
        };
        let d = rng.random_range(2..6);
        // Trial 1 pins lambda to zero so the pure cross-entropy path is hit.
        let lambda = if trial == 1 {
            0.0
        } else {
            rng.random_range(0.0..4.0)
        };
        let architecture = if trial % 2 == 0 {
            Architecture::Linear
        } else {
            Architecture::Mlp1 {
                hidden_dim: rng.random_range(3..6),
            }
        };
        let model = ModelParams::init(architecture, d, c, rng).unwrap();
        let features = Matrix::new(
            m,
            d,
            (0..m * d).map(|_| rng.random_range(-1.5..1.5)).collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..c)).collect();
        let weights = random_weights(rng, c);

        let (batch, cache) = model.forward(&features, &labels).unwrap();
        let ace_grad = ace_grad_wrt_logits(&batch, &weights).unwrap();
        let grads = model
            .backward(&cache, &labels, Some(&ace_grad), lambda)
            .unwrap();
        let analytic = flat_grads(&grads);

        let mut f = |flat: &[f64]| {
            let probe = with_flat_params(&model, flat);
            let (b, _) = probe.forward(&features, &labels).unwrap();
            let ce = cross_entropy(&b);
            let ace = ace_energy(&b, &weights, BcnPath::TraceFast).unwrap();
            total_loss(ce, ace, lambda)
        };
        let numeric = central_difference(&mut f, &flat_params(&model), FD_STEP);
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

/// Runs every gradient family for `trials` random instances and reports the
/// worst relative error per family.
pub fn run(seed: u64, trials: usize) -> Result<GradCheckReport> {
    if trials == 0 {
        return Err(crate::Error::Invalid("trials must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, "gradcheck");
    let families = vec![
        FamilyResult {
            name: "ace_grad_wrt_p",
            max_rel_error: check_grad_wrt_p(&mut rng, trials),
            trials,
        },
        FamilyResult {
            name: "ace_grad_wrt_ahat",
            max_rel_error: check_grad_wrt_ahat(&mut rng, trials),
            trials,
        },
        FamilyResult {
            name: "ace_grad_wrt_logits",
            max_rel_error: check_grad_wrt_logits(&mut rng, trials),
            trials,
        },
        FamilyResult {
            name: "model_backward",
            max_rel_error: check_model_backward(&mut rng, trials),
            trials,
        },
    ];
    Ok(GradCheckReport { families })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_quadratic() {
        let mut f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let g = central_difference(&mut f, &[2.0, -1.0], 1e-6);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn all_families_pass_at_tolerance() {
        let report = run(0xace, 25).unwrap();
        for family in &report.families {
            assert!(
                family.max_rel_error <= GRAD_TOL,
                "{} exceeded tolerance: {}",
                family.name,
                family.max_rel_error
            );
        }
    }

    #[test]
    fn zero_trials_is_invalid() {
        assert!(run(1, 0).is_err());
    }
}
