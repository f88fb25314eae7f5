//! Evaluation: top-1 accuracy overall and per frequency group (many /
//! median / few), classifier weight-norm profile, and the train/val
//! overfitting gap.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::train::TrainLog;
use serde::{Deserialize, Serialize};

/// How classes are split into many / median / few frequency groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GroupMode {
    /// many: count > hi, few: count < lo, median: in between (inclusive).
    AbsoluteThresholds { hi: usize, lo: usize },
    /// Top `p_hi` fraction of classes by count are many, bottom `p_lo` are
    /// few (fractions of the class count, rounded).
    Percentile { p_hi: f64, p_lo: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Many,
    Median,
    Few,
}

/// A group mode resolved against concrete training counts: every class is
/// assigned to exactly one group.
#[derive(Debug, Clone)]
pub struct GroupSpec {
    mode: GroupMode,
    assignment: Vec<Group>,
}

impl GroupSpec {
    /// Derives the class-to-group map from training-set class counts.
    pub fn build(mode: GroupMode, train_counts: &[usize]) -> Result<Self> {
        if train_counts.is_empty() {
            return Err(Error::Invalid("no classes to group".into()));
        }
        let c = train_counts.len();
        let assignment = match mode {
            GroupMode::AbsoluteThresholds { hi, lo } => {
                if !(hi > lo && lo >= 1) {
                    return Err(Error::Invalid(format!(
                        "need hi > lo >= 1, got hi={hi} lo={lo}"
                    )));
                }
                train_counts
                    .iter()
                    .map(|&n| {
                        if n > hi {
                            Group::Many
                        } else if n < lo {
                            Group::Few
                        } else {
                            Group::Median
                        }
                    })
                    .collect()
            }
            GroupMode::Percentile { p_hi, p_lo } => {
                if !(p_hi >= 0.0 && p_lo >= 0.0 && p_hi + p_lo <= 1.0) {
                    return Err(Error::Invalid(format!(
                        "need p_hi, p_lo >= 0 with p_hi + p_lo <= 1, got {p_hi} and {p_lo}"
                    )));
                }
                let n_hi = (p_hi * c as f64).round() as usize;
                let n_lo = ((p_lo * c as f64).round() as usize).min(c - n_hi);
                // Sort by count descending, index ascending for determinism.
                let mut order: Vec<usize> = (0..c).collect();
                order.sort_by(|&a, &b| train_counts[b].cmp(&train_counts[a]).then(a.cmp(&b)));
                let mut assignment = vec![Group::Median; c];
                for (rank, &class) in order.iter().enumerate() {
                    if rank < n_hi {
                        assignment[class] = Group::Many;
                    } else if rank >= c - n_lo {
                        assignment[class] = Group::Few;
                    }
                }
                assignment
            }
        };
        Ok(Self { mode, assignment })
    }

    pub fn mode(&self) -> GroupMode {
        self.mode
    }

    pub fn group_of(&self, class: usize) -> Group {
        self.assignment[class]
    }

    pub fn assignment(&self) -> &[Group] {
        &self.assignment
    }
}

/// Top-1 accuracy per class and overall.
#[derive(Debug, Clone)]
pub struct Top1 {
    /// Accuracy per class; absent for classes with no eval samples.
    pub per_class: Vec<Option<f64>>,
    /// Eval-set sample count per class.
    pub per_class_counts: Vec<usize>,
    pub total: f64,
}

/// Argmax-over-logits accuracy, ties broken toward the lowest class index.
pub fn top1(model: &ModelParams, ds: &Dataset) -> Result<Top1> {
    if ds.num_samples() == 0 {
        return Err(Error::Invalid("cannot evaluate an empty dataset".into()));
    }
    let c = model.num_classes();
    if ds.num_classes() > c {
        return Err(Error::Shape(format!(
            "dataset has {} classes, model only {c}",
            ds.num_classes()
        )));
    }
    let logits = model.logits(ds.features())?;
    let mut correct = vec![0usize; c];
    let mut counts = vec![0usize; c];
    for (m, &y) in ds.labels().iter().enumerate() {
        let mut best = 0usize;
        let mut best_v = logits.get(0, m);
        for i in 1..c {
            let v = logits.get(i, m);
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        counts[y] += 1;
        if best == y {
            correct[y] += 1;
        }
    }
    let total_correct: usize = correct.iter().sum();
    let per_class = correct
        .iter()
        .zip(&counts)
        .map(|(&ok, &n)| {
            if n > 0 {
                Some(ok as f64 / n as f64)
            } else {
                None
            }
        })
        .collect();
    Ok(Top1 {
        per_class,
        per_class_counts: counts,
        total: total_correct as f64 / ds.num_samples() as f64,
    })
}

/// Sample-weighted accuracy per frequency group. Empty groups come back as
/// `None`, not zero.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub many: Option<f64>,
    pub median: Option<f64>,
    pub few: Option<f64>,
}

pub fn group_accuracy(
    per_class: &[Option<f64>],
    eval_counts: &[usize],
    gspec: &GroupSpec,
) -> Result<GroupAccuracy> {
    if per_class.len() > gspec.assignment.len() || eval_counts.len() != per_class.len() {
        return Err(Error::Shape(format!(
            "{} accuracies, {} counts, {} grouped classes",
            per_class.len(),
            eval_counts.len(),
            gspec.assignment.len()
        )));
    }
    let mut sums = [0.0_f64; 3];
    let mut weights = [0.0_f64; 3];
    for (class, acc) in per_class.iter().enumerate() {
        let (Some(acc), n) = (acc, eval_counts[class]) else {
            continue;
        };
        if n == 0 {
            continue;
        }
        let g = gspec.group_of(class) as usize;
        sums[g] += acc * n as f64;
        weights[g] += n as f64;
    }
    let pick = |g: Group| {
        let i = g as usize;
        if weights[i] > 0.0 {
            Some(sums[i] / weights[i])
        } else {
            None
        }
    };
    Ok(GroupAccuracy {
        many: pick(Group::Many),
        median: pick(Group::Median),
        few: pick(Group::Few),
    })
}

/// Distribution of the per-class classifier weight norms. `flatness` is the
/// population std over the mean; lower means the head classes dominate the
/// classifier less.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightNormStats {
    pub per_class: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub flatness: f64,
}

pub fn weight_norm_profile(model: &ModelParams) -> WeightNormStats {
    let per_class = model.classifier_weight_norms();
    let c = per_class.len() as f64;
    let mean = per_class.iter().sum::<f64>() / c;
    let std = (per_class.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c).sqrt();
    let flatness = if mean > 0.0 { std / mean } else { 0.0 };
    WeightNormStats {
        per_class,
        mean,
        std,
        flatness,
    }
}

/// Final-epoch train accuracy minus validation accuracy.
pub fn overfit_gap(log: &TrainLog) -> Result<f64> {
    let last = log
        .epochs
        .last()
        .ok_or_else(|| Error::Invalid("empty training log".into()))?;
    Ok(last.train_acc - last.val_acc)
}

/// Full evaluation report in the shape the CLI writes out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1_total: f64,
    pub top1_by_group: GroupAccuracy,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub weight_norm_stats: WeightNormStats,
    pub train_val_gap: Option<f64>,
}

/// Evaluates `model` on `test_ds`, grouping classes by the training counts.
pub fn evaluate(
    model: &ModelParams,
    test_ds: &Dataset,
    train_counts: &[usize],
    mode: GroupMode,
    log: Option<&TrainLog>,
) -> Result<EvalReport> {
    let gspec = GroupSpec::build(mode, train_counts)?;
    let top = top1(model, test_ds)?;
    let by_group = group_accuracy(&top.per_class, &top.per_class_counts, &gspec)?;
    let gap = match log {
        Some(log) => Some(overfit_gap(log)?),
        None => None,
    };
    Ok(EvalReport {
        top1_total: top.total,
        top1_by_group: by_group,
        per_class_accuracy: top.per_class,
        weight_norm_stats: weight_norm_profile(model),
        train_val_gap: gap,
    })
}

/// Per-class CSV rows (class, eval count, accuracy, weight norm) for
/// plotting.
pub fn write_per_class_csv(
    report: &EvalReport,
    eval_counts: &[usize],
    path: &std::path::Path,
) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = std::io::BufWriter::new(file);
    let path_str = path.display().to_string();
    writeln!(out, "class,eval_count,accuracy,weight_norm")
        .map_err(|e| Error::io(path_str.clone(), e))?;
    for (class, acc) in report.per_class_accuracy.iter().enumerate() {
        let acc_str = match acc {
            Some(a) => a.to_string(),
            None => String::new(),
        };
        writeln!(
            out,
            "{class},{},{acc_str},{}",
            eval_counts.get(class).copied().unwrap_or(0),
            report.weight_norm_stats.per_class[class],
        )
        .map_err(|e| Error::io(path_str.clone(), e))?;
    }
    out.flush().map_err(|e| Error::io(path_str, e))
}
