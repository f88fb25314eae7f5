//! Flat key=value experiment configuration: one pair per line, `#` starts a
//! comment. Every key is also overridable by a CLI flag; unknown keys fail
//! with the full list of valid ones.

use ace_core::data::{generate, load_csv, Dataset, Split, SyntheticSpec};
use ace_core::error::{Error, Result};
use ace_core::eval::GroupMode;
use ace_core::model::Architecture;
use ace_core::train::{Method, SamplerKind, TrainConfig};
use serde::Serialize;
use std::path::{Path, PathBuf};

pub const VALID_KEYS: &[&str] = &[
    "train_csv",
    "test_csv",
    "classes",
    "meta",
    "dim",
    "delta",
    "ratio",
    "max_count",
    "noise_std",
    "test_per_class",
    "hidden",
    "epochs",
    "batch_size",
    "lr0",
    "momentum",
    "lambda",
    "tau",
    "eta",
    "learnable_a",
    "sampler",
    "method",
    "seed",
    "group_mode",
    "group_hi",
    "group_lo",
    "group_p_hi",
    "group_p_lo",
];

/// Hyperparameter regimes matching the three dataset families the
/// regularizer targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Balanced fine-grained data: lambda 10, tau 0.
    Fgvc,
    /// Long-tailed, low fine-grained factor: lambda 0.25, tau 0.1.
    LongTail,
    /// Both at once: lambda 2.0, tau 0.0.
    NaturalWorld,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    // Data: either a CSV pair or a synthetic spec.
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub classes: usize,
    pub meta: usize,
    pub dim: usize,
    pub delta: f64,
    pub ratio: f64,
    pub max_count: usize,
    pub noise_std: f64,
    pub test_per_class: usize,
    // Model: 0 hidden units means a linear classifier.
    pub hidden: usize,
    pub train: TrainConfig,
    // Frequency grouping for reports.
    pub group_mode: String,
    pub group_hi: usize,
    pub group_lo: usize,
    pub group_p_hi: f64,
    pub group_p_lo: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train_csv: None,
            test_csv: None,
            classes: 20,
            meta: 4,
            dim: 16,
            delta: 0.15,
            ratio: 1.0,
            max_count: 100,
            noise_std: 0.25,
            test_per_class: 25,
            hidden: 32,
            train: TrainConfig::default(),
            group_mode: "percentile".into(),
            group_hi: 100,
            group_lo: 20,
            group_p_hi: 1.0 / 3.0,
            group_p_lo: 1.0 / 3.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!("expected key=value, found `{line}`"),
                });
            };
            cfg.apply(key.trim(), value.trim())
                .map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
        }
        Ok(cfg)
    }

    /// Sets one configuration key from its textual value.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "train_csv" => self.train_csv = Some(PathBuf::from(value)),
            "test_csv" => self.test_csv = Some(PathBuf::from(value)),
            "classes" => self.classes = parse(key, value)?,
            "meta" => self.meta = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "ratio" => self.ratio = parse(key, value)?,
            "max_count" => self.max_count = parse(key, value)?,
            "noise_std" => self.noise_std = parse(key, value)?,
            "test_per_class" => self.test_per_class = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "lr0" => self.train.lr0 = parse(key, value)?,
            "momentum" => self.train.momentum = parse(key, value)?,
            "lambda" => self.train.lambda = parse(key, value)?,
            "tau" => self.train.tau = parse(key, value)?,
            "eta" => self.train.eta = parse(key, value)?,
            "learnable_a" => self.train.learnable_a = parse_bool(key, value)?,
            "sampler" => self.train.sampler = parse_sampler(value)?,
            "method" => self.train.method = parse_method(value)?,
            "seed" => self.train.seed = parse(key, value)?,
            "group_mode" => {
                if value != "percentile" && value != "absolute" {
                    return Err(Error::Invalid(format!(
                        "group_mode must be `percentile` or `absolute`, got `{value}`"
                    )));
                }
                self.group_mode = value.to_string();
            }
            "group_hi" => self.group_hi = parse(key, value)?,
            "group_lo" => self.group_lo = parse(key, value)?,
            "group_p_hi" => self.group_p_hi = parse(key, value)?,
            "group_p_lo" => self.group_p_lo = parse(key, value)?,
            _ => {
                return Err(Error::Invalid(format!(
                    "unknown config key `{key}`; valid keys: {}",
                    VALID_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        match preset {
            Preset::Fgvc => {
                self.train.lambda = 10.0;
                self.train.tau = 0.0;
            }
            Preset::LongTail => {
                self.train.lambda = 0.25;
                self.train.tau = 0.1;
            }
            Preset::NaturalWorld => {
                self.train.lambda = 2.0;
                self.train.tau = 0.0;
            }
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: self.classes,
            num_meta: self.meta,
            feature_dim: self.dim,
            fine_grained_scale: self.delta,
            imbalance_ratio: self.ratio,
            max_count: self.max_count,
            noise_std: self.noise_std,
            test_per_class: self.test_per_class,
            seed: self.train.seed,
        }
    }

    pub fn is_synthetic(&self) -> bool {
        self.train_csv.is_none()
    }

    /// Loads the CSV pair or generates the synthetic splits.
    pub fn load_datasets(&self) -> Result<(Dataset, Dataset)> {
        match (&self.train_csv, &self.test_csv) {
            (Some(train), Some(test)) => {
                Ok((load_csv(train, Split::Train)?, load_csv(test, Split::Test)?))
            }
            (Some(_), None) | (None, Some(_)) => Err(Error::Invalid(
                "train_csv and test_csv must be given together".into(),
            )),
            (None, None) => generate(&self.synthetic_spec()),
        }
    }

    pub fn architecture(&self) -> Architecture {
        if self.hidden == 0 {
            Architecture::Linear
        } else {
            Architecture::Mlp1 {
                hidden_dim: self.hidden,
            }
        }
    }

    pub fn group_mode(&self) -> GroupMode {
        if self.group_mode == "absolute" {
            GroupMode::AbsoluteThresholds {
                hi: self.group_hi,
                lo: self.group_lo,
            }
        } else {
            GroupMode::Percentile {
                p_hi: self.group_p_hi,
                p_lo: self.group_p_lo,
            }
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Invalid(format!("cannot parse `{value}` for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Invalid(format!(
            "cannot parse `{value}` as a boolean for key `{key}`"
        ))),
    }
}

pub fn parse_sampler(value: &str) -> Result<SamplerKind> {
    match value {
        "instance_balanced" => Ok(SamplerKind::InstanceBalanced),
        "distinct_class" => Ok(SamplerKind::DistinctClass),
        "class_balanced" => Ok(SamplerKind::ClassBalanced),
        _ => Err(Error::Invalid(format!(
            "sampler must be instance_balanced, distinct_class, or class_balanced, got `{value}`"
        ))),
    }
}

pub fn parse_method(value: &str) -> Result<Method> {
    match value {
        "ce_only" => Ok(Method::CeOnly),
        "pc" => Ok(Method::Pc),
        "ace" => Ok(Method::Ace),
        _ => Err(Error::Invalid(format!(
            "method must be ce_only, pc, or ace, got `{value}`"
        ))),
    }
}
