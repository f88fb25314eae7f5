//! From-scratch classifier: a linear softmax model or a one-hidden-layer
//! ReLU MLP, with a deterministic forward pass and a manual backward pass
//! that accepts the combined cross-entropy + confusion-energy logit
//! gradient.
//!
//! Activations are held column-major (one sample per column) so the batch
//! prediction matrix falls straight out of the final softmax.

use crate::ace::PredictionBatch;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Floor applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Checkpoint format version written by [`ModelParams::save`].
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    Mlp1 { hidden_dim: usize },
}

/// One dense layer: `z = weights * x + biases` with weights out_dim x in_dim.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

/// All trainable parameters of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    architecture: Architecture,
    layers: Vec<Layer>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input features, one column per sample (d x M).
    pub input_cols: Matrix,
    /// Pre-activation of each layer, in order.
    pub pre_activations: Vec<Matrix>,
    /// Post-ReLU activations of each hidden layer.
    pub hidden_activations: Vec<Matrix>,
    /// Softmax output (C x M).
    pub probs: Matrix,
}

/// Per-layer gradients matching [`ModelParams::layers`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<Layer>,
}

impl ModelParams {
    /// Initializes parameters with symmetric uniform scaling
    /// +-sqrt(6 / (fan_in + fan_out)) per layer and zero biases.
    pub fn init(
        architecture: Architecture,
        input_dim: usize,
        num_classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 {
            return Err(Error::Invalid(format!(
                "need input_dim >= 1 and num_classes >= 2, got {input_dim} and {num_classes}"
            )));
        }
        let dims: Vec<(usize, usize)> = match architecture {
            Architecture::Linear => vec![(num_classes, input_dim)],
            Architecture::Mlp1 { hidden_dim } => {
                if hidden_dim == 0 {
                    return Err(Error::Invalid("hidden_dim must be positive".into()));
                }
                vec![(hidden_dim, input_dim), (num_classes, hidden_dim)]
            }
        };
        let layers = dims
            .into_iter()
            .map(|(out_dim, in_dim)| {
                let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
                let data: Vec<f64> = (0..out_dim * in_dim)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer {
                    weights: Matrix::new(out_dim, in_dim, data).expect("finite init"),
                    biases: vec![0.0; out_dim],
                }
            })
            .collect();
        Ok(Self {
            architecture,
            layers,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Replaces the final (classifier) layer, e.g. for second-stage
    /// classifier retraining.
    pub fn replace_final_layer(&mut self, layer: Layer) -> Result<()> {
        let old = self.layers.last().expect("model has layers");
        if layer.weights.rows() != old.weights.rows() || layer.weights.cols() != old.weights.cols()
        {
            return Err(Error::Shape(
                "replacement classifier has wrong shape".into(),
            ));
        }
        *self.layers.last_mut().unwrap() = layer;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().expect("model has layers").weights.rows()
    }

    /// Forward pass over a batch. `features` holds one sample per row
    /// (M x d); `labels` ride along into the prediction batch.
    pub fn forward(
        &self,
        features: &Matrix,
        labels: &[usize],
    ) -> Result<(PredictionBatch, ForwardCache)> {
        if features.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "features have {} dims, model expects {}",
                features.cols(),
                self.input_dim()
            )));
        }
        let input_cols = features.transpose();
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut hidden_activations = Vec::new();
        let mut current = input_cols.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weights.matmul(&current)?;
            for i in 0..z.rows() {
                let b = layer.biases[i];
                for m in 0..z.cols() {
                    z.set(i, m, z.get(i, m) + b);
                }
            }
            pre_activations.push(z.clone());
            if l + 1 < self.layers.len() {
                let mut act = z;
                for i in 0..act.rows() {
                    for m in 0..act.cols() {
                        if act.get(i, m) < 0.0 {
                            act.set(i, m, 0.0);
                        }
                    }
                }
                hidden_activations.push(act.clone());
                current = act;
            } else {
                current = z;
            }
        }
        let probs = softmax_columns(&current);
        let batch = PredictionBatch::from_matrix(probs.clone(), labels.to_vec())?;
        Ok((
            batch,
            ForwardCache {
                input_cols,
                pre_activations,
                hidden_activations,
                probs,
            },
        ))
    }

    /// Logits for a batch (C x M), without caching.
    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "features have {} dims, model expects {}",
                features.cols(),
                self.input_dim()
            )));
        }
        let mut current = features.transpose();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weights.matmul(&current)?;
            for i in 0..z.rows() {
                let b = layer.biases[i];
                for m in 0..z.cols() {
                    let mut v = z.get(i, m) + b;
                    if l + 1 < self.layers.len() && v < 0.0 {
                        v = 0.0;
                    }
                    z.set(i, m, v);
                }
            }
            current = z;
        }
        Ok(current)
    }

    /// Gradients of `L_CE + lambda * L_ACE` with respect to every parameter.
    ///
    /// The cross-entropy logit gradient is `(p - onehot(y)) / M` per column;
    /// `ace_logit_grad`, when given, is added scaled by `lambda` before
    /// propagating through the layers. Passing `lambda = 0` reproduces plain
    /// cross-entropy backprop exactly.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        labels: &[usize],
        ace_logit_grad: Option<&Matrix>,
        lambda: f64,
    ) -> Result<ParamGrads> {
        let c = self.num_classes();
        let m = cache.probs.cols();
        if labels.len() != m {
            return Err(Error::Shape(format!(
                "{} labels for {m} columns",
                labels.len()
            )));
        }
        let mut logit_grad = Matrix::zeros(c, m);
        let inv_m = 1.0 / m as f64;
        for (col, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::Invalid(format!(
                    "label {y} out of range for {c} classes"
                )));
            }
            for i in 0..c {
                let p = cache.probs.get(i, col);
                let target = if i == y { 1.0 } else { 0.0 };
                logit_grad.set(i, col, (p - target) * inv_m);
            }
        }
        if lambda != 0.0 {
            if let Some(extra) = ace_logit_grad {
                if extra.rows() != c || extra.cols() != m {
                    return Err(Error::Shape(format!(
                        "ace logit gradient is {}x{}, expected {c}x{m}",
                        extra.rows(),
                        extra.cols()
                    )));
                }
                for i in 0..c {
                    for col in 0..m {
                        logit_grad.set(i, col, logit_grad.get(i, col) + lambda * extra.get(i, col));
                    }
                }
            }
        }

        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        let mut upstream = logit_grad;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let below = if l == 0 {
                &cache.input_cols
            } else {
                &cache.hidden_activations[l - 1]
            };
            let weight_grad = upstream.matmul(&below.transpose())?;
            let bias_grad: Vec<f64> = (0..upstream.rows())
                .map(|i| upstream.row(i).iter().sum())
                .collect();
            grads.push(Layer {
                weights: weight_grad,
                biases: bias_grad,
            });
            if l > 0 {
                let mut next = layer.weights.transpose().matmul(&upstream)?;
                let pre = &cache.pre_activations[l - 1];
                for i in 0..next.rows() {
                    for col in 0..next.cols() {
                        if pre.get(i, col) <= 0.0 {
                            next.set(i, col, 0.0);
                        }
                    }
                }
                upstream = next;
            }
        }
        grads.reverse();
        Ok(ParamGrads { layers: grads })
    }

    /// True when every weight and bias is finite. The training loop checks
    /// this after each update to catch divergence early.
    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.data().iter().all(|w| w.is_finite()) && l.biases.iter().all(|b| b.is_finite())
        })
    }

    /// l2 norm of each row of the final classifier layer (one per class).
    pub fn classifier_weight_norms(&self) -> Vec<f64> {
        let last = self.layers.last().expect("model has layers");
        (0..last.weights.rows())
            .map(|i| {
                last.weights
                    .row(i)
                    .iter()
                    .map(|w| w * w)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Writes a versioned JSON checkpoint. The float payload survives the
    /// round trip bit-exactly.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let record = CheckpointFile {
            format_version: CHECKPOINT_VERSION,
            architecture: self.architecture,
            input_dim: self.input_dim(),
            num_classes: self.num_classes(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    out_dim: l.weights.rows(),
                    in_dim: l.weights.cols(),
                    weights: l.weights.data().to_vec(),
                    biases: l.biases.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&record).expect("checkpoint serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Loads a checkpoint written by [`ModelParams::save`].
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let record: CheckpointFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if record.format_version != CHECKPOINT_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported checkpoint version {}",
                record.format_version
            )));
        }
        let mut layers = Vec::with_capacity(record.layers.len());
        for l in &record.layers {
            layers.push(Layer {
                weights: Matrix::new(l.out_dim, l.in_dim, l.weights.clone())?,
                biases: l.biases.clone(),
            });
        }
        let params = Self {
            architecture: record.architecture,
            layers,
        };
        if params.input_dim() != record.input_dim || params.num_classes() != record.num_classes {
            return Err(Error::Invalid(
                "checkpoint header disagrees with layer shapes".into(),
            ));
        }
        Ok(params)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    architecture: Architecture,
    input_dim: usize,
    num_classes: usize,
    layers: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    out_dim: usize,
    in_dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

/// Column-wise softmax with max-shift for stability.
pub fn softmax_columns(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for m in 0..logits.cols() {
        let mut maxv = f64::NEG_INFINITY;
        for i in 0..logits.rows() {
            maxv = maxv.max(logits.get(i, m));
        }
        let mut sum = 0.0;
        for i in 0..logits.rows() {
            let e = (logits.get(i, m) - maxv).exp();
            out.set(i, m, e);
            sum += e;
        }
        for i in 0..logits.rows() {
            out.set(i, m, out.get(i, m) / sum);
        }
    }
    out
}

/// Mean negative log-likelihood of the correct classes, with probabilities
/// clamped at [`PROB_CLAMP`] before the log.
pub fn cross_entropy(batch: &PredictionBatch) -> f64 {
    let p = batch.matrix();
    let m = batch.batch_size();
    let mut total = 0.0;
    for (col, &y) in batch.labels().iter().enumerate() {
        total -= p.get(y, col).max(PROB_CLAMP).ln();
    }
    total / m as f64
}
