//! Dataset ingestion, splitting, label encoding, batching, and synthetic
//! Gaussian-mixture benchmarks.
//!
//! The on-disk format is a headerless CSV, one sample per line:
//! `label,f1,f2,...,fd` with a non-negative integer label and decimal float
//! features. LF and CRLF are both accepted. Feature files carry raw vectors;
//! any normalization happens inside training.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::Batch;
use crate::rng;

/// Feature vectors with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    /// Builds a dataset, validating the type invariants: matching lengths,
    /// finite features, labels below `num_classes`, and `num_classes >= 2`.
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(
                "LabeledDataset::new",
                format!("{} labels", features.rows()),
                format!("{}", labels.len()),
            ));
        }
        if num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if !features.is_finite() {
            return Err(Error::InvalidConfig("features contain non-finite values".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows selected by index, keeping the class count.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// One-hot targets for every row (n x K).
    pub fn one_hot_targets(&self) -> Matrix {
        let mut t = Matrix::zeros(self.len(), self.num_classes);
        for (r, &l) in self.labels.iter().enumerate() {
            t.set(r, l, 1.0);
        }
        t
    }

    /// Serializes to the CSV format. Feature formatting is shortest
    /// round-trip, so write/load/write is a fixed point.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (r, &label) in self.labels.iter().enumerate() {
            out.push_str(&label.to_string());
            for v in self.features.row(r) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Parses the dataset CSV format. `K` is inferred as `max label + 1`
/// (minimum 2, so a single-class file still describes a binary problem).
pub fn parse_dataset(text: &str) -> Result<LabeledDataset> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut dim: Option<usize> = None;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.is_empty() {
            return Err(Error::DatasetParse {
                line: line_no,
                message: "empty line".into(),
            });
        }
        let mut cells = line.split(',');
        let label_cell = cells.next().expect("split yields at least one cell");
        let label: i64 = label_cell.trim().parse().map_err(|_| Error::DatasetParse {
            line: line_no,
            message: format!("non-numeric label {label_cell:?}"),
        })?;
        if label < 0 {
            return Err(Error::DatasetParse {
                line: line_no,
                message: format!("negative label {label}"),
            });
        }

        let mut features = Vec::new();
        for cell in cells {
            let v: f64 = cell.trim().parse().map_err(|_| Error::DatasetParse {
                line: line_no,
                message: format!("non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::DatasetParse {
                    line: line_no,
                    message: format!("non-finite feature {cell:?}"),
                });
            }
            features.push(v);
        }
        if features.is_empty() {
            return Err(Error::DatasetParse {
                line: line_no,
                message: "no feature columns".into(),
            });
        }
        match dim {
            None => dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(Error::DatasetParse {
                    line: line_no,
                    message: format!("ragged row: expected {d} features, got {}", features.len()),
                });
            }
            Some(_) => {}
        }
        labels.push(label as usize);
        rows.push(features);
    }

    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    LabeledDataset::new(Matrix::from_rows(&rows)?, labels, num_classes.max(2))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

/// How to split a dataset into train and test portions.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.5,
            seed: 0,
            stratified: true,
        }
    }
}

/// Splits into disjoint (train, test) covering the dataset. Deterministic
/// given the seed; stratified splits keep per-class proportions within one
/// sample of the full set.
pub fn split(ds: &LabeledDataset, spec: &SplitSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction must be in (0,1), got {}",
            spec.train_fraction
        )));
    }
    let mut rng = rng::stream(spec.seed, "data/split");
    let mut train_idx: Vec<usize> = Vec::new();
    let mut test_idx: Vec<usize> = Vec::new();

    if spec.stratified {
        for class in 0..ds.num_classes() {
            let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
            members.shuffle(&mut rng);
            let take = (spec.train_fraction * members.len() as f64).round() as usize;
            train_idx.extend_from_slice(&members[..take]);
            test_idx.extend_from_slice(&members[take..]);
        }
    } else {
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut rng);
        let take = (spec.train_fraction * order.len() as f64).round() as usize;
        train_idx.extend_from_slice(&order[..take]);
        test_idx.extend_from_slice(&order[take..]);
    }

    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "train_fraction {} leaves an empty split for {} samples",
            spec.train_fraction,
            ds.len()
        )));
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((ds.subset(&train_idx), ds.subset(&test_idx)))
}

/// One-hot encodes `label` into a length-`k` vector.
pub fn one_hot(label: usize, k: usize) -> Result<Vec<f64>> {
    if label >= k {
        return Err(Error::InvalidConfig(format!(
            "label {label} out of range for {k} classes"
        )));
    }
    let mut v = vec![0.0; k];
    v[label] = 1.0;
    Ok(v)
}

/// Gaussian-mixture stand-in for precomputed document embeddings: one
/// spherical component per class with a shared covariance scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub dim: usize,
    /// One mean vector per class, each of length `dim`.
    pub class_means: Vec<Vec<f64>>,
    /// Per-dimension variance shared by every component.
    pub cov_scale: f64,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Two classes at `±mean_scale` along every axis. The mean scale is the
    /// class-overlap knob: accuracy ceilings fall as it shrinks.
    pub fn symmetric(dim: usize, mean_scale: f64, cov_scale: f64, samples_per_class: usize, seed: u64) -> Self {
        SyntheticSpec {
            dim,
            class_means: vec![vec![-mean_scale; dim], vec![mean_scale; dim]],
            cov_scale,
            samples_per_class,
            seed,
        }
    }

    /// `k` classes with means spread evenly over `[-mean_scale, mean_scale]`
    /// along every axis.
    pub fn spread(dim: usize, k: usize, mean_scale: f64, cov_scale: f64, samples_per_class: usize, seed: u64) -> Self {
        let means = (0..k)
            .map(|c| {
                let s = if k == 1 {
                    0.0
                } else {
                    -1.0 + 2.0 * c as f64 / (k - 1) as f64
                };
                vec![mean_scale * s; dim]
            })
            .collect();
        SyntheticSpec {
            dim,
            class_means: means,
            cov_scale,
            samples_per_class,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidConfig(format!("dim must be >= 2, got {}", self.dim)));
        }
        if self.class_means.len() < 2 {
            return Err(Error::InvalidConfig("need at least 2 class means".into()));
        }
        if self.class_means.iter().any(|m| m.len() != self.dim) {
            return Err(Error::InvalidConfig("class mean length must equal dim".into()));
        }
        if self.class_means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("class means must be finite".into()));
        }
        if !(self.cov_scale.is_finite() && self.cov_scale >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "covariance scale must be non-negative, got {}",
                self.cov_scale
            )));
        }
        if self.samples_per_class == 0 {
            return Err(Error::InvalidConfig("samples_per_class must be positive".into()));
        }
        Ok(())
    }
}

/// Draws the mixture described by `spec`. Rows are grouped by class;
/// deterministic given the seed.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let k = spec.class_means.len();
    let n = k * spec.samples_per_class;
    let mut rng = rng::stream(spec.seed, "data/synthetic");
    let std = spec.cov_scale.sqrt();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let mut features = Matrix::zeros(n, spec.dim);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (class, mean) in spec.class_means.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let out = features.row_mut(row);
            for (o, &m) in out.iter_mut().zip(mean) {
                *o = m + std * noise.sample(&mut rng);
            }
            labels.push(class);
            row += 1;
        }
    }
    LabeledDataset::new(features, labels, k.max(2))
}

/// Without-replacement minibatch sampler. Each epoch is a fresh shuffled
/// permutation; the final batch of an epoch may be short when the batch size
/// does not divide the dataset.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, seed: u64, name: &str) -> Self {
        let mut rng = rng::stream(seed, name);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        BatchSampler { order, cursor: 0, rng }
    }

    /// Next batch of up to `batch_size` rows with one-hot targets.
    pub fn sample_batch(&mut self, ds: &LabeledDataset, batch_size: usize) -> Result<Batch> {
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if batch_size > ds.len() {
            return Err(Error::InvalidConfig(format!(
                "batch_size {batch_size} exceeds dataset size {}",
                ds.len()
            )));
        }
        if self.order.len() != ds.len() {
            return Err(Error::shape(
                "BatchSampler::sample_batch",
                format!("{} samples", self.order.len()),
                format!("{}", ds.len()),
            ));
        }
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + batch_size).min(self.order.len());
        let picks = &self.order[self.cursor..end];
        self.cursor = end;

        let inputs = ds.features().select_rows(picks);
        let mut targets = Matrix::zeros(picks.len(), ds.num_classes());
        for (r, &i) in picks.iter().enumerate() {
            targets.set(r, ds.labels()[i], 1.0);
        }
        Batch::new(inputs, targets)
    }
}
