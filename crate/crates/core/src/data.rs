//! Synthetic "natural world" datasets with independently controlled
//! imbalance ratio and fine-grained geometry, plus CSV ingestion for
//! pre-extracted feature datasets.
//!
//! Geometry: K meta-category centers are drawn on the unit sphere; each
//! class mean sits at its meta-center plus a scaled unit offset that is
//! orthogonalized against the center, so the fine-grained scale cleanly
//! controls how similar sibling classes look. Class counts follow an
//! exponential long-tail profile N_max * r^(-i / (C-1)). The test split is
//! always class-balanced.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::seed::stream_rng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    /// Number of meta-categories; classes partition into contiguous groups.
    pub num_meta: usize,
    pub feature_dim: usize,
    /// Fine-grained scale: distance of class means from their meta-center.
    /// Smaller is more fine-grained.
    pub fine_grained_scale: f64,
    /// Ratio between the largest and smallest class count, >= 1.
    pub imbalance_ratio: f64,
    /// Count of the largest (head) class.
    pub max_count: usize,
    pub noise_std: f64,
    /// Per-class size of the balanced test split.
    pub test_per_class: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Invalid("need at least 2 classes".into()));
        }
        if self.num_meta == 0 || self.num_meta > self.num_classes {
            return Err(Error::Invalid(format!(
                "num_meta must be in [1, {}], got {}",
                self.num_classes, self.num_meta
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Invalid("feature_dim must be positive".into()));
        }
        if self.fine_grained_scale.is_nan() || self.fine_grained_scale <= 0.0 {
            return Err(Error::Invalid("fine_grained_scale must be positive".into()));
        }
        if self.imbalance_ratio.is_nan() || self.imbalance_ratio < 1.0 {
            return Err(Error::Invalid("imbalance_ratio must be >= 1".into()));
        }
        if self.max_count == 0 {
            return Err(Error::Invalid("max_count must be positive".into()));
        }
        if self.noise_std.is_nan() || self.noise_std <= 0.0 {
            return Err(Error::Invalid("noise_std must be positive".into()));
        }
        if self.test_per_class == 0 {
            return Err(Error::Invalid("test_per_class must be positive".into()));
        }
        if self.test_per_class > self.max_count {
            return Err(Error::Invalid(format!(
                "test_per_class {} exceeds the head-class budget {}",
                self.test_per_class, self.max_count
            )));
        }
        Ok(())
    }

    /// Long-tail count profile: N_i = round(N_max * r^(-i / (C-1))), floored
    /// at one sample.
    pub fn class_counts(&self) -> Vec<usize> {
        let c = self.num_classes;
        (0..c)
            .map(|i| {
                let decay = self.imbalance_ratio.powf(-(i as f64) / (c as f64 - 1.0));
                ((self.max_count as f64 * decay).round() as usize).max(1)
            })
            .collect()
    }
}

/// A feature dataset: one sample per row, integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    split: Split,
    class_counts: Vec<usize>,
}

impl Dataset {
    /// Wraps features and labels; the class count vector is tallied with
    /// length `max(label) + 1`.
    pub fn new(features: Matrix, labels: Vec<usize>, split: Split) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
        let mut class_counts = vec![0usize; num_classes];
        for &y in &labels {
            class_counts[y] += 1;
        }
        Ok(Self {
            features,
            labels,
            split,
            class_counts,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Feature rows gathered into a batch matrix (rows = picked samples).
    pub fn gather(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let mut out = Matrix::zeros(indices.len(), self.feature_dim());
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &idx) in indices.iter().enumerate() {
            for j in 0..self.feature_dim() {
                out.set(row, j, self.features.get(idx, j));
            }
            labels.push(self.labels[idx]);
        }
        (out, labels)
    }
}

/// Derived dataset statistics: the long-tail and fine-grained axes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStats {
    /// max class count / min class count.
    pub imbalance_ratio: f64,
    /// Mean pairwise cosine similarity of per-class feature means.
    pub fine_grained_factor: f64,
    pub per_class_counts: Vec<usize>,
    /// Count boundaries of the default percentile (1/3, 1/3) frequency
    /// grouping: classes with counts >= many_min_count are "many", classes
    /// with counts <= few_max_count are "few".
    pub group_thresholds: GroupThresholds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupThresholds {
    pub many_min_count: usize,
    pub few_max_count: usize,
}

/// Generates a (train, test) pair from the spec. The test split holds
/// `test_per_class` samples of every class regardless of the train counts.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, "data");
    let c = spec.num_classes;
    let d = spec.feature_dim;

    let meta_centers: Vec<Vec<f64>> = (0..spec.num_meta)
        .map(|_| unit_gaussian(&mut rng, d))
        .collect();

    let class_means: Vec<Vec<f64>> = (0..c)
        .map(|i| {
            let center = &meta_centers[i * spec.num_meta / c];
            let offset = orthogonal_unit(&mut rng, center);
            center
                .iter()
                .zip(&offset)
                .map(|(ctr, off)| ctr + spec.fine_grained_scale * off)
                .collect()
        })
        .collect();

    let counts = spec.class_counts();
    let train = sample_split(
        &mut rng,
        &class_means,
        &counts,
        spec.noise_std,
        Split::Train,
    )?;
    let test_counts = vec![spec.test_per_class; c];
    let test = sample_split(
        &mut rng,
        &class_means,
        &test_counts,
        spec.noise_std,
        Split::Test,
    )?;
    Ok((train, test))
}

fn sample_split(
    rng: &mut impl Rng,
    class_means: &[Vec<f64>],
    counts: &[usize],
    noise_std: f64,
    split: Split,
) -> Result<Dataset> {
    let d = class_means[0].len();
    let n: usize = counts.iter().sum();
    let mut features = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (class, (&count, mean)) in counts.iter().zip(class_means).enumerate() {
        for _ in 0..count {
            for (j, &mu) in mean.iter().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                features.set(row, j, mu + noise_std * noise);
            }
            labels.push(class);
            row += 1;
        }
    }
    Dataset::new(features, labels, split)
}

fn unit_gaussian(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Unit vector orthogonal to `center` when the dimension permits; in one
/// dimension the offset degenerates to a random sign.
fn orthogonal_unit(rng: &mut impl Rng, center: &[f64]) -> Vec<f64> {
    if center.len() == 1 {
        return unit_gaussian(rng, 1);
    }
    loop {
        let g = unit_gaussian(rng, center.len());
        let dot: f64 = g.iter().zip(center).map(|(a, b)| a * b).sum();
        let residual: Vec<f64> = g.iter().zip(center).map(|(a, b)| a - dot * b).collect();
        let norm = residual.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return residual.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Imbalance ratio and mean pairwise cosine similarity of the per-class
/// feature means, with the default percentile group thresholds.
pub fn compute_stats(ds: &Dataset) -> Result<DatasetStats> {
    let c = ds.num_classes();
    if c < 2 {
        return Err(Error::Invalid("stats need at least 2 classes".into()));
    }
    if let Some(empty) = ds.class_counts().iter().position(|&n| n == 0) {
        return Err(Error::Invalid(format!("class {empty} has no samples")));
    }
    let d = ds.feature_dim();
    let mut means = vec![vec![0.0; d]; c];
    for (row, &y) in ds.labels().iter().enumerate() {
        for (j, slot) in means[y].iter_mut().enumerate() {
            *slot += ds.features().get(row, j);
        }
    }
    for (class, mean) in means.iter_mut().enumerate() {
        let count = ds.class_counts()[class] as f64;
        for v in mean.iter_mut() {
            *v /= count;
        }
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return Err(Error::Invalid(format!(
                "degenerate geometry: class {class} has a zero-norm feature mean"
            )));
        }
    }

    let mut cos_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..c {
        for j in (i + 1)..c {
            cos_sum += cosine(&means[i], &means[j]);
            pairs += 1;
        }
    }

    let max = *ds.class_counts().iter().max().unwrap();
    let min = *ds.class_counts().iter().min().unwrap();
    Ok(DatasetStats {
        imbalance_ratio: max as f64 / min as f64,
        fine_grained_factor: cos_sum / pairs as f64,
        per_class_counts: ds.class_counts().to_vec(),
        group_thresholds: percentile_thresholds(ds.class_counts()),
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Count boundaries of the percentile (1/3, 1/3) grouping over classes
/// sorted by count.
fn percentile_thresholds(counts: &[usize]) -> GroupThresholds {
    let mut sorted: Vec<usize> = counts.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let c = sorted.len();
    let n_hi = ((c as f64) / 3.0).round().max(1.0) as usize;
    let n_lo = ((c as f64) / 3.0).round().max(1.0) as usize;
    GroupThresholds {
        many_min_count: sorted[n_hi.min(c) - 1],
        few_max_count: sorted[c - n_lo.min(c)],
    }
}

/// Writes the dataset as CSV with a `label,f0,f1,...` header. Floats are
/// printed in shortest round-trip form, so save followed by load is
/// bit-exact.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = std::io::BufWriter::new(file);
    let path_str = path.display().to_string();
    write!(out, "label").map_err(|e| Error::io(path_str.clone(), e))?;
    for j in 0..ds.feature_dim() {
        write!(out, ",f{j}").map_err(|e| Error::io(path_str.clone(), e))?;
    }
    writeln!(out).map_err(|e| Error::io(path_str.clone(), e))?;
    for (row, &y) in ds.labels().iter().enumerate() {
        write!(out, "{y}").map_err(|e| Error::io(path_str.clone(), e))?;
        for j in 0..ds.feature_dim() {
            write!(out, ",{}", ds.features().get(row, j))
                .map_err(|e| Error::io(path_str.clone(), e))?;
        }
        writeln!(out).map_err(|e| Error::io(path_str.clone(), e))?;
    }
    out.flush().map_err(|e| Error::io(path_str, e))
}

/// Parses a CSV dataset. Reports malformed rows with their 1-based line
/// number. The class count is inferred as `max(label) + 1`.
pub fn load_csv(path: &Path, split: Split) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let path_str = path.display().to_string();
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::io(path_str.clone(), e))?,
        None => return Err(Error::Invalid(format!("{path_str} is empty"))),
    };
    let header_fields: Vec<&str> = header.split(',').collect();
    if header_fields.first() != Some(&"label") || header_fields.len() < 2 {
        return Err(Error::Parse {
            path: path_str,
            line: 1,
            message: "expected header `label,f0,f1,...`".into(),
        });
    }
    let dim = header_fields.len() - 1;

    let mut rows: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path_str.clone(), e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Parse {
                path: path_str,
                line: lineno,
                message: format!("expected {} fields, found {}", dim + 1, fields.len()),
            });
        }
        let label: usize = fields[0].trim().parse().map_err(|_| Error::Parse {
            path: path_str.clone(),
            line: lineno,
            message: format!("label `{}` is not a non-negative integer", fields[0]),
        })?;
        labels.push(label);
        for f in &fields[1..] {
            let value: f64 = f.trim().parse().map_err(|_| Error::Parse {
                path: path_str.clone(),
                line: lineno,
                message: format!("feature `{f}` is not a number"),
            })?;
            rows.push(value);
        }
    }
    if labels.is_empty() {
        return Err(Error::Invalid(format!("{path_str} has no data rows")));
    }
    let features = Matrix::new(labels.len(), dim, rows)?;
    Dataset::new(features, labels, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_spec() -> SyntheticSpec {
        SyntheticSpec {
            num_classes: 10,
            num_meta: 2,
            feature_dim: 8,
            fine_grained_scale: 0.2,
            imbalance_ratio: 100.0,
            max_count: 500,
            noise_std: 0.1,
            test_per_class: 10,
            seed: 7,
        }
    }

    #[test]
    fn count_profile_matches_hand_evaluation() {
        let spec = base_spec();
        assert_eq!(
            spec.class_counts(),
            vec![500, 300, 180, 108, 65, 39, 23, 14, 8, 5]
        );
    }

    #[test]
    fn balanced_ratio_gives_constant_counts() {
        let spec = SyntheticSpec {
            imbalance_ratio: 1.0,
            ..base_spec()
        };
        assert!(spec.class_counts().iter().all(|&n| n == 500));
    }

    #[test]
    fn counts_non_increasing_and_ratio_near_target() {
        for r in [2.0, 10.0, 100.0] {
            let spec = SyntheticSpec {
                imbalance_ratio: r,
                ..base_spec()
            };
            let counts = spec.class_counts();
            for w in counts.windows(2) {
                assert!(w[0] >= w[1]);
            }
            let head = counts[0] as f64;
            let tail = *counts.last().unwrap() as f64;
            // Rounding the tail count moves the realized ratio by at most
            // one count's worth.
            let lo = head / (tail + 1.0);
            let hi = head / (tail - 1.0).max(1.0);
            assert!(
                r >= lo - 1e-9 && r <= hi + 1e-9,
                "ratio {r} not in [{lo}, {hi}]"
            );
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = base_spec();
        let (train_a, test_a) = generate(&spec).unwrap();
        let (train_b, test_b) = generate(&spec).unwrap();
        assert_eq!(train_a, train_b);
        assert_eq!(test_a, test_b);
    }

    #[test]
    fn test_split_is_balanced() {
        let (_, test) = generate(&base_spec()).unwrap();
        assert!(test.class_counts().iter().all(|&n| n == 10));
    }

    #[test]
    fn train_counts_follow_profile() {
        let spec = base_spec();
        let (train, _) = generate(&spec).unwrap();
        assert_eq!(train.class_counts(), spec.class_counts().as_slice());
    }

    #[test]
    fn shrinking_scale_raises_fine_grained_factor() {
        let mut factors = Vec::new();
        for scale in [0.8, 0.4, 0.2, 0.1, 0.05] {
            let spec = SyntheticSpec {
                fine_grained_scale: scale,
                imbalance_ratio: 1.0,
                max_count: 100,
                ..base_spec()
            };
            let (train, _) = generate(&spec).unwrap();
            factors.push(compute_stats(&train).unwrap().fine_grained_factor);
        }
        for w in factors.windows(2) {
            assert!(w[1] >= w[0], "factor fell from {} to {}", w[0], w[1]);
        }
    }

    #[test]
    fn tiny_scale_single_meta_factor_approaches_one() {
        let spec = SyntheticSpec {
            num_meta: 1,
            fine_grained_scale: 1e-9,
            noise_std: 1e-9,
            imbalance_ratio: 1.0,
            max_count: 50,
            ..base_spec()
        };
        let (train, _) = generate(&spec).unwrap();
        let stats = compute_stats(&train).unwrap();
        assert!(stats.fine_grained_factor > 1.0 - 1e-6);
    }

    #[test]
    fn stats_hand_cases() {
        // Balanced two-class set with orthogonal means.
        let features = Matrix::from_rows(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]]);
        let ds = Dataset::new(features, vec![0, 0, 1, 1], Split::Train).unwrap();
        let stats = compute_stats(&ds).unwrap();
        assert_eq!(stats.imbalance_ratio, 1.0);
        assert!(stats.fine_grained_factor.abs() < 1e-12);

        // Identical means.
        let features = Matrix::from_rows(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let ds = Dataset::new(features, vec![0, 1], Split::Train).unwrap();
        let stats = compute_stats(&ds).unwrap();
        assert!((stats.fine_grained_factor - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stats_reject_degenerate_means() {
        let features = Matrix::from_rows(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let ds = Dataset::new(features, vec![0, 1], Split::Train).unwrap();
        assert!(compute_stats(&ds).is_err());
    }

    #[test]
    fn generated_stats_land_near_spec_axes() {
        let spec = base_spec();
        let (train, _) = generate(&spec).unwrap();
        let stats = compute_stats(&train).unwrap();
        assert_eq!(stats.imbalance_ratio, 100.0);
        assert!(stats.fine_grained_factor > 0.0 && stats.fine_grained_factor < 1.0);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        let (train, _) = generate(&SyntheticSpec {
            num_classes: 4,
            max_count: 12,
            ..base_spec()
        })
        .unwrap();
        save_csv(&train, &path).unwrap();
        let loaded = load_csv(&path, Split::Train).unwrap();
        assert_eq!(train, loaded);
        for (a, b) in train.features().data().iter().zip(loaded.features().data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn csv_two_rows_infers_classes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.csv");
        std::fs::write(&path, "label,f0,f1\n0,0.5,1.5\n1,-2.0,0.25\n").unwrap();
        let ds = load_csv(&path, Split::Train).unwrap();
        assert_eq!(ds.num_samples(), 2);
        assert_eq!(ds.num_classes(), 2);
    }

    #[test]
    fn csv_parse_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "label,f0\n0,1.5\n1,potato\n").unwrap();
        match load_csv(&path, Split::Train) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        std::fs::write(&path, "").unwrap();
        assert!(matches!(
            load_csv(&path, Split::Train),
            Err(Error::Invalid(_))
        ));

        std::fs::write(&path, "label,f0\n").unwrap();
        assert!(matches!(
            load_csv(&path, Split::Train),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn spec_validation_rejects_bad_fields() {
        let mut spec = base_spec();
        spec.num_meta = 11;
        assert!(spec.validate().is_err());
        let mut spec = base_spec();
        spec.imbalance_ratio = 0.5;
        assert!(spec.validate().is_err());
        let mut spec = base_spec();
        spec.test_per_class = 501;
        assert!(spec.validate().is_err());
    }
}
