//! Three-component conditional GAN.
//!
//! A generator maps `[noise; one-hot class]` to a fake feature vector; a
//! discriminator scores `[features; one-hot class]` pairs as real; a frozen
//! baseline classifier, trained beforehand on the small in-domain set,
//! supplies a second training signal that pushes generated samples toward
//! regions the classifier assigns to their conditioning class.
//!
//! Losses:
//! - discriminator: `BCE(D(real pair), smoothing_target) + BCE(D(fake pair), 0)`,
//!   batch-averaged, with one-sided label smoothing on the real term only;
//! - generator: `L_G = L_G1 + lambda * L_G2` with the non-saturating
//!   adversarial term `L_G1 = -log D(fake pair)` and the classifier-agreement
//!   term `L_G2 = CE(conditioning class, C(fake features))`.
//!
//! Stabilization: pre-training on a larger external dataset, per-batch
//! feature normalization, Gaussian input noise during fine-tuning, one-sided
//! label smoothing, a random number of generator updates per iteration, and
//! a lambda schedule that rises late in training.

use std::fmt;
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::io::{encode_model, load_model, save_model};
use crate::nn::loss::{
    binary_cross_entropy, binary_cross_entropy_deriv, categorical_cross_entropy,
    categorical_cross_entropy_grad, clamp_prob, PROB_EPS,
};
use crate::nn::optim::{optimizer_step, OptimizerKind, OptimizerState};
use crate::nn::{
    init_model, standard_normal, Gradients, HiddenActivation, MlpModel, OutputActivation,
};
use crate::rng;

const MANIFEST_MAGIC: &str = "AUGFORGE-CGAN v1";

/// Piecewise-constant lambda schedule over the training-progress fraction.
/// The first entry must start at fraction 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSchedule {
    entries: Vec<(f64, f64)>,
}

impl LambdaSchedule {
    pub fn new(entries: Vec<(f64, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidConfig("lambda schedule is empty".into()));
        }
        if entries[0].0 != 0.0 {
            return Err(Error::InvalidConfig(
                "lambda schedule must start at fraction 0".into(),
            ));
        }
        for pair in entries.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::InvalidConfig(
                    "lambda schedule fractions must be strictly increasing".into(),
                ));
            }
        }
        for &(f, l) in &entries {
            if !(0.0..=1.0).contains(&f) || !l.is_finite() || l < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "bad lambda schedule entry ({f}, {l})"
                )));
            }
        }
        Ok(LambdaSchedule { entries })
    }

    /// Constant lambda at every fraction.
    pub fn constant(lambda: f64) -> Result<Self> {
        LambdaSchedule::new(vec![(0.0, lambda)])
    }

    pub fn entries(&self) -> &[(f64, f64)] {
        &self.entries
    }

    /// Grammar: `L0,L1@F1,L2@F2,...` — a plain first value at fraction 0,
    /// then `value@fraction` steps.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, item) in text.split(',').enumerate() {
            let item = item.trim();
            if let Some((v, f)) = item.split_once('@') {
                let lambda: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad lambda value {v:?}")))?;
                let frac: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad lambda fraction {f:?}")))?;
                entries.push((frac, lambda));
            } else {
                if i != 0 {
                    return Err(Error::InvalidConfig(
                        "only the first lambda entry may omit @fraction".into(),
                    ));
                }
                let lambda: f64 = item
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad lambda value {item:?}")))?;
                entries.push((0.0, lambda));
            }
        }
        LambdaSchedule::new(entries)
    }
}

impl Default for LambdaSchedule {
    /// 0.5 until 80% of the run, then 2.0.
    fn default() -> Self {
        LambdaSchedule {
            entries: vec![(0.0, 0.5), (0.8, 2.0)],
        }
    }
}

impl fmt::Display for LambdaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, &(frac, lambda)) in self.entries.iter().enumerate() {
            if i == 0 {
                write!(f, "{lambda}")?;
            } else {
                write!(f, ",{lambda}@{frac}")?;
            }
        }
        Ok(())
    }
}

/// Lambda in effect at `fraction` of the way through training.
pub fn lambda_at(schedule: &LambdaSchedule, fraction: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "iteration fraction must be in [0,1], got {fraction}"
        )));
    }
    let mut lambda = schedule.entries[0].1;
    for &(f, l) in &schedule.entries {
        if fraction >= f {
            lambda = l;
        }
    }
    Ok(lambda)
}

/// All conditional-GAN training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CGanConfig {
    /// Length of the noise vector fed to the generator.
    pub noise_dim: usize,
    pub lambda_schedule: LambdaSchedule,
    /// One-sided label-smoothing target for *real* samples.
    pub smoothing_target: f64,
    /// Variance of the Gaussian noise injected into real inputs during
    /// fine-tuning.
    pub input_noise_variance: f64,
    /// Inclusive range for the random number of generator updates per
    /// iteration.
    pub gen_updates: (u32, u32),
    /// Total mixed batch per discriminator step (half real, half fake).
    pub batch_size: usize,
    pub pretrain_iters: usize,
    pub finetune_iters: usize,
    /// Hidden layer widths; input/output dims come from the data.
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for CGanConfig {
    fn default() -> Self {
        CGanConfig {
            noise_dim: 100,
            lambda_schedule: LambdaSchedule::default(),
            smoothing_target: 0.9,
            input_noise_variance: 0.02,
            gen_updates: (1, 3),
            batch_size: 64,
            pretrain_iters: 2000,
            finetune_iters: 2000,
            generator_hidden: vec![128, 128],
            discriminator_hidden: vec![64, 32],
            optimizer: OptimizerKind::adam(),
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl CGanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_dim == 0 {
            return Err(Error::InvalidConfig("noise_dim must be positive".into()));
        }
        if !(self.smoothing_target > 0.5 && self.smoothing_target <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "smoothing_target must be in (0.5, 1], got {}",
                self.smoothing_target
            )));
        }
        if !(self.input_noise_variance.is_finite() && self.input_noise_variance >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "input_noise_variance must be non-negative, got {}",
                self.input_noise_variance
            )));
        }
        let (lo, hi) = self.gen_updates;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(format!(
                "gen_updates range must satisfy 1 <= min <= max, got {lo}..{hi}"
            )));
        }
        if self.batch_size < 4 || self.batch_size % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "batch_size must be even and >= 4, got {}",
                self.batch_size
            )));
        }
        if self.generator_hidden.iter().any(|&d| d == 0)
            || self.discriminator_hidden.iter().any(|&d| d == 0)
        {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// Generator layout for feature dim `d` and `k` classes:
    /// `[noise + k, hidden..., d]`, tanh hidden, linear output.
    pub fn generator_dims(&self, d: usize, k: usize) -> Vec<usize> {
        let mut dims = vec![self.noise_dim + k];
        dims.extend_from_slice(&self.generator_hidden);
        dims.push(d);
        dims
    }

    /// Discriminator layout: `[d + k, hidden..., 1]`, sigmoid output.
    pub fn discriminator_dims(&self, d: usize, k: usize) -> Vec<usize> {
        let mut dims = vec![d + k];
        dims.extend_from_slice(&self.discriminator_hidden);
        dims.push(1);
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    pub fn tag(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        }
    }
}

/// Per-iteration training telemetry.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iter: usize,
    pub phase: Phase,
    pub loss_d: f64,
    pub loss_g1: f64,
    pub loss_g2: f64,
    pub lambda: f64,
    pub gen_updates: u32,
}

/// A trained generator/discriminator pair, the fingerprint of the frozen
/// baseline classifier it was trained against, and its telemetry.
#[derive(Debug, Clone)]
pub struct TrainedCGan {
    pub generator: MlpModel,
    pub discriminator: MlpModel,
    /// Hex SHA-256 of the baseline classifier's serialized form.
    pub baseline_ref: String,
    pub telemetry: Vec<IterationRecord>,
    pub config: CGanConfig,
}

/// Generator outputs labeled by their conditioning classes.
#[derive(Debug, Clone, PartialEq)]
pub struct FakeDataset {
    pub data: LabeledDataset,
}

/// Hex SHA-256 over a model's serialized bytes.
pub fn model_fingerprint(model: &MlpModel) -> String {
    hex::encode(Sha256::digest(encode_model(model)))
}

/// Centers and scales each column to zero mean and unit population std.
/// Columns with std below 1e-12 are centered only and reported with std 1.
/// Returns (normalized, per-column means, per-column stds).
pub fn normalize_batch(features: &Matrix) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "normalize_batch needs at least 2 rows, got {n}"
        )));
    }
    let d = features.cols();
    let mut means = vec![0.0; d];
    for r in 0..n {
        for (m, v) in means.iter_mut().zip(features.row(r)) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut stds = vec![0.0; d];
    for r in 0..n {
        for (s, (v, m)) in stds.iter_mut().zip(features.row(r).iter().zip(&means)) {
            let c = v - m;
            *s += c * c;
        }
    }
    for s in &mut stds {
        *s = (*s / n as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let mut out = Matrix::zeros(n, d);
    for r in 0..n {
        let src = features.row(r);
        let dst = out.row_mut(r);
        for c in 0..d {
            dst[c] = (src[c] - means[c]) / stds[c];
        }
    }
    Ok((out, means, stds))
}

/// Adds i.i.d. Gaussian noise of the given variance to every entry. Fresh
/// noise on every call.
pub fn inject_noise(features: &Matrix, variance: f64, rng: &mut impl Rng) -> Matrix {
    assert!(variance >= 0.0, "noise variance must be non-negative");
    let mut out = features.clone();
    if variance == 0.0 {
        return out;
    }
    let std = variance.sqrt();
    for v in out.as_mut_slice() {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        *v += std * z;
    }
    out
}

/// Discriminator loss: batch-mean `BCE(D(real), smoothing_target)` plus
/// batch-mean `BCE(D(fake), 0)`. Smoothing touches the real term only.
pub fn discriminator_loss(d_real: &[f64], d_fake: &[f64], smoothing_target: f64) -> f64 {
    let real: f64 = d_real
        .iter()
        .map(|&p| binary_cross_entropy(p, smoothing_target))
        .sum::<f64>()
        / d_real.len().max(1) as f64;
    let fake: f64 = d_fake
        .iter()
        .map(|&p| binary_cross_entropy(p, 0.0))
        .sum::<f64>()
        / d_fake.len().max(1) as f64;
    real + fake
}

/// Generator loss components for a batch of fakes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLoss {
    /// `L_G1 + lambda * L_G2`.
    pub total: f64,
    /// Non-saturating adversarial term, mean of `-ln D(fake pair)`.
    pub adversarial: f64,
    /// Baseline-classifier agreement term, mean cross-entropy.
    pub classifier: f64,
}

/// Computes `(L_G, L_G1, L_G2)` for fake-pair discriminator scores,
/// baseline-classifier probabilities, and conditioning one-hots.
pub fn generator_loss(
    d_fake: &[f64],
    c_probs: &Matrix,
    y_onehot: &Matrix,
    lambda: f64,
) -> Result<GeneratorLoss> {
    if c_probs.rows() != d_fake.len() || y_onehot.rows() != d_fake.len() {
        return Err(Error::shape(
            "generator_loss",
            format!("{} rows", d_fake.len()),
            format!("{} / {}", c_probs.rows(), y_onehot.rows()),
        ));
    }
    let n = d_fake.len().max(1) as f64;
    let adversarial = d_fake.iter().map(|&p| -clamp_prob(p).ln()).sum::<f64>() / n;
    let mut classifier = 0.0;
    for r in 0..c_probs.rows() {
        classifier += categorical_cross_entropy(c_probs.row(r), y_onehot.row(r))?;
    }
    classifier /= n;
    Ok(GeneratorLoss {
        total: adversarial + lambda * classifier,
        adversarial,
        classifier,
    })
}

/// Adversarial-path loss and generator gradients: `L_G1 = mean -ln D([G(in); y])`
/// with the conditioning one-hots taken from the last columns of `g_in`.
/// The discriminator's parameters receive no gradient.
pub fn generator_adversarial_gradients(
    generator: &MlpModel,
    discriminator: &MlpModel,
    g_in: &Matrix,
) -> Result<(f64, Gradients)> {
    let d = generator.output_dim();
    let k = discriminator.input_dim() - d;
    let n = g_in.rows();
    let y = g_in.slice_cols(g_in.cols() - k, g_in.cols());
    let g_trace = generator.forward_traced(g_in)?;
    let d_in = Matrix::hstack(g_trace.output(), &y)?;
    let d_trace = discriminator.forward_traced(&d_in)?;

    let mut loss = 0.0;
    let mut gp = Matrix::zeros(n, 1);
    for r in 0..n {
        let p = d_trace.output().get(r, 0);
        loss += -clamp_prob(p).ln();
        let dv = if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
            0.0
        } else {
            -1.0 / p
        };
        gp.set(r, 0, dv / n as f64);
    }
    loss /= n as f64;

    let (_, d_input_grad) = discriminator.backward(&d_in, &d_trace, &gp)?;
    let gx = d_input_grad.slice_cols(0, d);
    let (grads, _) = generator.backward(g_in, &g_trace, &gx)?;
    Ok((loss, grads))
}

/// Classifier-path loss and generator gradients:
/// `L_G2 = mean CE(y, C(G(in)))` against the frozen baseline classifier.
pub fn generator_classifier_gradients(
    generator: &MlpModel,
    baseline: &MlpModel,
    g_in: &Matrix,
) -> Result<(f64, Gradients)> {
    let k = baseline.output_dim();
    let n = g_in.rows();
    let y = g_in.slice_cols(g_in.cols() - k, g_in.cols());
    let g_trace = generator.forward_traced(g_in)?;
    let fake_x = g_trace.output();
    let c_trace = baseline.forward_traced(fake_x)?;
    let c_probs = c_trace.output();

    let mut loss = 0.0;
    let mut gc = Matrix::zeros(n, k);
    for r in 0..n {
        loss += categorical_cross_entropy(c_probs.row(r), y.row(r))?;
        let row = categorical_cross_entropy_grad(c_probs.row(r), y.row(r))?;
        for (c, v) in row.iter().enumerate() {
            gc.set(r, c, v / n as f64);
        }
    }
    loss /= n as f64;

    let (_, gx) = baseline.backward(fake_x, &c_trace, &gc)?;
    let (grads, _) = generator.backward(g_in, &g_trace, &gx)?;
    Ok((loss, grads))
}

/// Fused generator step: one forward through the generator, gradients pulled
/// back through both the discriminator and the frozen baseline classifier.
/// `g_in` rows are `[noise; one-hot class]`.
pub fn generator_step_gradients(
    generator: &MlpModel,
    discriminator: &MlpModel,
    baseline: &MlpModel,
    g_in: &Matrix,
    lambda: f64,
) -> Result<(GeneratorLoss, Gradients)> {
    let d = generator.output_dim();
    let k = baseline.output_dim();
    let n = g_in.rows();
    let y = g_in.slice_cols(g_in.cols() - k, g_in.cols());
    let g_trace = generator.forward_traced(g_in)?;
    let fake_x = g_trace.output();

    let d_in = Matrix::hstack(fake_x, &y)?;
    let d_trace = discriminator.forward_traced(&d_in)?;
    let p: Vec<f64> = (0..n).map(|r| d_trace.output().get(r, 0)).collect();
    let c_trace = baseline.forward_traced(fake_x)?;
    let c_probs = c_trace.output();

    let losses = generator_loss(&p, c_probs, &y, lambda)?;

    let mut gp = Matrix::zeros(n, 1);
    for (r, &pv) in p.iter().enumerate() {
        let dv = if pv <= PROB_EPS || pv >= 1.0 - PROB_EPS {
            0.0
        } else {
            -1.0 / pv
        };
        gp.set(r, 0, dv / n as f64);
    }
    let (_, d_input_grad) = discriminator.backward(&d_in, &d_trace, &gp)?;
    let mut gx = d_input_grad.slice_cols(0, d);

    let mut gc = Matrix::zeros(n, k);
    for r in 0..n {
        let row = categorical_cross_entropy_grad(c_probs.row(r), y.row(r))?;
        for (c, v) in row.iter().enumerate() {
            gc.set(r, c, v / n as f64);
        }
    }
    let (_, c_input_grad) = baseline.backward(fake_x, &c_trace, &gc)?;
    for (a, b) in gx.as_mut_slice().iter_mut().zip(c_input_grad.as_slice()) {
        *a += lambda * b;
    }

    let (grads, _) = generator.backward(g_in, &g_trace, &gx)?;
    Ok((losses, grads))
}

struct ExactBatcher {
    sampler: crate::data::BatchSampler,
}

impl ExactBatcher {
    fn new(n: usize, seed: u64, name: &str) -> Self {
        ExactBatcher {
            sampler: crate::data::BatchSampler::new(n, seed, name),
        }
    }

    /// Draws exactly `size` rows, stitching across an epoch boundary when
    /// the epoch tail would come up short.
    fn draw(&mut self, ds: &LabeledDataset, size: usize) -> Result<(Matrix, Matrix)> {
        let first = self.sampler.sample_batch(ds, size)?;
        if first.len() == size {
            return Ok((first.inputs, first.targets));
        }
        let rest = self.sampler.sample_batch(ds, size - first.len())?;
        Ok((
            Matrix::vstack(&first.inputs, &rest.inputs)?,
            Matrix::vstack(&first.targets, &rest.targets)?,
        ))
    }
}

/// Trains the conditional GAN: `pretrain_iters` iterations on the external
/// dataset, then `finetune_iters` on the in-domain dataset. Each iteration
/// is one discriminator step on a half-real/half-fake batch followed by a
/// random number of generator steps. Real features are normalized per batch;
/// Gaussian input noise applies during fine-tuning only. The baseline
/// classifier is read-only throughout.
pub fn train_cgan(
    pretrain: &LabeledDataset,
    finetune: &LabeledDataset,
    baseline: &MlpModel,
    config: &CGanConfig,
) -> Result<TrainedCGan> {
    config.validate()?;
    let d = finetune.dim();
    let k = finetune.num_classes();
    if pretrain.dim() != d {
        return Err(Error::shape(
            "train_cgan",
            format!("pretrain feature dim {d}"),
            format!("{}", pretrain.dim()),
        ));
    }
    if pretrain.num_classes() != k {
        return Err(Error::shape(
            "train_cgan",
            format!("{k} classes"),
            format!("{}", pretrain.num_classes()),
        ));
    }
    if baseline.input_dim() != d || baseline.output_dim() != k {
        return Err(Error::shape(
            "train_cgan",
            format!("baseline {d} -> {k}"),
            format!("{} -> {}", baseline.input_dim(), baseline.output_dim()),
        ));
    }
    let half = config.batch_size / 2;
    if config.pretrain_iters > 0 && pretrain.len() < half {
        return Err(Error::InvalidConfig(format!(
            "pretrain set has {} samples but the real half-batch needs {half}",
            pretrain.len()
        )));
    }
    if config.finetune_iters > 0 && finetune.len() < half {
        return Err(Error::InvalidConfig(format!(
            "finetune set has {} samples but the real half-batch needs {half}",
            finetune.len()
        )));
    }

    let seed = config.seed;
    let mut generator = init_model(
        &config.generator_dims(d, k),
        HiddenActivation::Tanh,
        OutputActivation::Linear,
        rng::substream_seed(seed, "cgan/init_generator"),
    )?;
    let mut discriminator = init_model(
        &config.discriminator_dims(d, k),
        HiddenActivation::Tanh,
        OutputActivation::Sigmoid,
        rng::substream_seed(seed, "cgan/init_discriminator"),
    )?;
    let mut opt_g = OptimizerState::new(config.optimizer, config.learning_rate, &generator)?;
    let mut opt_d = OptimizerState::new(config.optimizer, config.learning_rate, &discriminator)?;

    let mut rng_noise = rng::stream(seed, "cgan/noise");
    let mut rng_labels = rng::stream(seed, "cgan/fake_labels");
    let mut rng_updates = rng::stream(seed, "cgan/gen_updates");
    let mut rng_inject = rng::stream(seed, "cgan/input_noise");
    let mut pre_batches = ExactBatcher::new(pretrain.len(), seed, "cgan/batch_pretrain");
    let mut fine_batches = ExactBatcher::new(finetune.len(), seed, "cgan/batch_finetune");

    let total = config.pretrain_iters + config.finetune_iters;
    let mut telemetry = Vec::with_capacity(total);

    for iter in 0..total {
        let phase = if iter < config.pretrain_iters {
            Phase::Pretrain
        } else {
            Phase::Finetune
        };
        let (ds, batcher) = match phase {
            Phase::Pretrain => (pretrain, &mut pre_batches),
            Phase::Finetune => (finetune, &mut fine_batches),
        };
        let lambda = lambda_at(&config.lambda_schedule, iter as f64 / total as f64)?;

        // Discriminator step on a mixed batch.
        let (real_x, real_y) = batcher.draw(ds, half)?;
        let (real_norm, _, _) = normalize_batch(&real_x)?;
        let real_in = match phase {
            Phase::Pretrain => real_norm,
            Phase::Finetune => inject_noise(&real_norm, config.input_noise_variance, &mut rng_inject),
        };

        let fake_labels: Vec<usize> = (0..half).map(|_| rng_labels.random_range(0..k)).collect();
        let fake_y = one_hot_rows(&fake_labels, k);
        let eta = standard_normal(half, config.noise_dim, &mut rng_noise);
        let fake_x = generator.forward(&Matrix::hstack(&eta, &fake_y)?)?;

        let d_in = Matrix::vstack(
            &Matrix::hstack(&real_in, &real_y)?,
            &Matrix::hstack(&fake_x, &fake_y)?,
        )?;
        let d_trace = discriminator.forward_traced(&d_in)?;
        let probs = d_trace.output();
        let p_real: Vec<f64> = (0..half).map(|r| probs.get(r, 0)).collect();
        let p_fake: Vec<f64> = (half..2 * half).map(|r| probs.get(r, 0)).collect();
        let loss_d = discriminator_loss(&p_real, &p_fake, config.smoothing_target);
        if !loss_d.is_finite() {
            return Err(Error::NonFiniteLoss {
                quantity: "discriminator loss",
                iteration: iter,
            });
        }

        let mut g_at_p = Matrix::zeros(2 * half, 1);
        for (r, &p) in p_real.iter().enumerate() {
            g_at_p.set(
                r,
                0,
                binary_cross_entropy_deriv(p, config.smoothing_target) / half as f64,
            );
        }
        for (r, &p) in p_fake.iter().enumerate() {
            g_at_p.set(half + r, 0, binary_cross_entropy_deriv(p, 0.0) / half as f64);
        }
        let (d_grads, _) = discriminator.backward(&d_in, &d_trace, &g_at_p)?;
        optimizer_step(&mut discriminator, &d_grads, &mut opt_d)?;

        // Generator steps; the discriminator and baseline stay fixed.
        let updates = rng_updates.random_range(config.gen_updates.0..=config.gen_updates.1);
        let mut sum_g1 = 0.0;
        let mut sum_g2 = 0.0;
        for _ in 0..updates {
            let labels: Vec<usize> = (0..half).map(|_| rng_labels.random_range(0..k)).collect();
            let y = one_hot_rows(&labels, k);
            let eta = standard_normal(half, config.noise_dim, &mut rng_noise);
            let g_in = Matrix::hstack(&eta, &y)?;
            let (losses, g_grads) =
                generator_step_gradients(&generator, &discriminator, baseline, &g_in, lambda)?;
            if !losses.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    quantity: "generator loss",
                    iteration: iter,
                });
            }
            sum_g1 += losses.adversarial;
            sum_g2 += losses.classifier;
            optimizer_step(&mut generator, &g_grads, &mut opt_g)?;
        }

        telemetry.push(IterationRecord {
            iter,
            phase,
            loss_d,
            loss_g1: sum_g1 / updates as f64,
            loss_g2: sum_g2 / updates as f64,
            lambda,
            gen_updates: updates,
        });
    }

    Ok(TrainedCGan {
        generator,
        discriminator,
        baseline_ref: model_fingerprint(baseline),
        telemetry,
        config: config.clone(),
    })
}

fn one_hot_rows(labels: &[usize], k: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), k);
    for (r, &l) in labels.iter().enumerate() {
        m.set(r, l, 1.0);
    }
    m
}

impl TrainedCGan {
    pub fn feature_dim(&self) -> usize {
        self.generator.output_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.generator.input_dim() - self.config.noise_dim
    }
}

/// Samples `n_per_class[k]` fakes conditioned on each class `k`, with fresh
/// standard-normal noise per sample. The label histogram of the result
/// matches the request exactly.
pub fn generate(cgan: &TrainedCGan, n_per_class: &[usize], rng: &mut impl Rng) -> Result<FakeDataset> {
    let k = cgan.num_classes();
    if n_per_class.len() != k {
        return Err(Error::shape(
            "generate",
            format!("{k} class counts"),
            format!("{}", n_per_class.len()),
        ));
    }
    let total: usize = n_per_class.iter().sum();
    if total == 0 {
        return Err(Error::InvalidConfig("requested zero samples".into()));
    }

    let mut features = Matrix::zeros(total, cgan.feature_dim());
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for (class, &count) in n_per_class.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let eta = standard_normal(count, cgan.config.noise_dim, rng);
        let y = one_hot_rows(&vec![class; count], k);
        let out = cgan.generator.forward(&Matrix::hstack(&eta, &y)?)?;
        for r in 0..count {
            features.row_mut(row).copy_from_slice(out.row(r));
            labels.push(class);
            row += 1;
        }
    }
    Ok(FakeDataset {
        data: LabeledDataset::new(features, labels, k)?,
    })
}

/// Telemetry CSV: `iter,phase,L_D,L_G1,L_G2,lambda,u`.
pub fn telemetry_to_csv(records: &[IterationRecord]) -> String {
    let mut out = String::from("iter,phase,L_D,L_G1,L_G2,lambda,u\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iter, r.phase.tag(), r.loss_d, r.loss_g1, r.loss_g2, r.lambda, r.gen_updates
        ));
    }
    out
}

/// Renders the manifest recording the training config and the frozen
/// baseline's fingerprint.
pub fn encode_manifest(config: &CGanConfig, baseline_sha256: &str) -> String {
    let optimizer = match config.optimizer {
        OptimizerKind::Adam { .. } => "adam".to_string(),
        OptimizerKind::SgdMomentum { momentum } => format!("sgd_momentum:{momentum}"),
    };
    format!(
        "{MANIFEST_MAGIC}\n\
         noise_dim={}\n\
         lambda={}\n\
         smoothing={}\n\
         input_noise_variance={}\n\
         gen_updates={}..{}\n\
         batch_size={}\n\
         pretrain_iters={}\n\
         finetune_iters={}\n\
         generator_hidden={}\n\
         discriminator_hidden={}\n\
         optimizer={optimizer}\n\
         learning_rate={}\n\
         seed={}\n\
         baseline_sha256={baseline_sha256}\n",
        config.noise_dim,
        config.lambda_schedule,
        config.smoothing_target,
        config.input_noise_variance,
        config.gen_updates.0,
        config.gen_updates.1,
        config.batch_size,
        config.pretrain_iters,
        config.finetune_iters,
        join_usizes(&config.generator_hidden),
        join_usizes(&config.discriminator_hidden),
        config.learning_rate,
        config.seed,
    )
}

fn join_usizes(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub(crate) fn parse_usize_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad integer {t:?}")))
        })
        .collect()
}

pub(crate) fn parse_gen_updates(text: &str) -> Result<(u32, u32)> {
    let (lo, hi) = text
        .split_once("..")
        .ok_or_else(|| Error::InvalidConfig(format!("expected min..max, got {text:?}")))?;
    let lo = lo
        .trim()
        .parse::<u32>()
        .map_err(|_| Error::InvalidConfig(format!("bad integer {lo:?}")))?;
    let hi = hi
        .trim()
        .parse::<u32>()
        .map_err(|_| Error::InvalidConfig(format!("bad integer {hi:?}")))?;
    Ok((lo, hi))
}

pub(crate) fn parse_optimizer(text: &str) -> Result<OptimizerKind> {
    if text == "adam" {
        return Ok(OptimizerKind::adam());
    }
    if let Some(m) = text.strip_prefix("sgd_momentum:") {
        let momentum: f64 = m
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad momentum {m:?}")))?;
        if !(momentum.is_finite() && (0.0..1.0).contains(&momentum)) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0,1), got {momentum}"
            )));
        }
        return Ok(OptimizerKind::SgdMomentum { momentum });
    }
    Err(Error::InvalidConfig(format!("unknown optimizer {text:?}")))
}

/// Parses a manifest back into `(config, baseline fingerprint)`.
pub fn parse_manifest(text: &str) -> Result<(CGanConfig, String)> {
    let mut lines = text.lines();
    let magic = lines
        .next()
        .ok_or_else(|| Error::MalformedFile("empty manifest".into()))?;
    if magic.trim_end_matches('\r') != MANIFEST_MAGIC {
        return Err(Error::VersionMismatch {
            expected: MANIFEST_MAGIC.to_string(),
            got: magic.chars().take(40).collect(),
        });
    }

    let mut config = CGanConfig::default();
    let mut baseline = None;
    let mut seen: Vec<String> = Vec::new();
    for raw in lines {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::MalformedFile(format!("expected key=value, got {line:?}")))?;
        let key = key.trim();
        let value = value.trim();
        if seen.iter().any(|s| s == key) {
            return Err(Error::MalformedFile(format!("duplicate key {key:?}")));
        }
        seen.push(key.to_string());
        let bad_int = |k: &str, v: &str| Error::MalformedFile(format!("bad integer for {k}: {v:?}"));
        let bad_float = |k: &str, v: &str| Error::MalformedFile(format!("bad number for {k}: {v:?}"));
        match key {
            "noise_dim" => config.noise_dim = value.parse().map_err(|_| bad_int(key, value))?,
            "lambda" => {
                config.lambda_schedule =
                    LambdaSchedule::parse(value).map_err(|e| Error::MalformedFile(e.to_string()))?
            }
            "smoothing" => {
                config.smoothing_target = value.parse().map_err(|_| bad_float(key, value))?
            }
            "input_noise_variance" => {
                config.input_noise_variance = value.parse().map_err(|_| bad_float(key, value))?
            }
            "gen_updates" => {
                config.gen_updates =
                    parse_gen_updates(value).map_err(|e| Error::MalformedFile(e.to_string()))?
            }
            "batch_size" => config.batch_size = value.parse().map_err(|_| bad_int(key, value))?,
            "pretrain_iters" => {
                config.pretrain_iters = value.parse().map_err(|_| bad_int(key, value))?
            }
            "finetune_iters" => {
                config.finetune_iters = value.parse().map_err(|_| bad_int(key, value))?
            }
            "generator_hidden" => {
                config.generator_hidden =
                    parse_usize_list(value).map_err(|e| Error::MalformedFile(e.to_string()))?
            }
            "discriminator_hidden" => {
                config.discriminator_hidden =
                    parse_usize_list(value).map_err(|e| Error::MalformedFile(e.to_string()))?
            }
            "optimizer" => {
                config.optimizer =
                    parse_optimizer(value).map_err(|e| Error::MalformedFile(e.to_string()))?
            }
            "learning_rate" => {
                config.learning_rate = value.parse().map_err(|_| bad_float(key, value))?
            }
            "seed" => config.seed = value.parse().map_err(|_| bad_int(key, value))?,
            "baseline_sha256" => baseline = Some(value.to_string()),
            other => return Err(Error::MalformedFile(format!("unknown manifest key {other:?}"))),
        }
    }
    let baseline = baseline.ok_or_else(|| Error::MalformedFile("missing baseline_sha256".into()))?;
    config
        .validate()
        .map_err(|e| Error::MalformedFile(e.to_string()))?;
    Ok((config, baseline))
}

/// Writes `generator.model`, `discriminator.model`, and `cgan.manifest`
/// into `dir`.
pub fn save_cgan(cgan: &TrainedCGan, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    save_model(&cgan.generator, dir.join("generator.model"))?;
    save_model(&cgan.discriminator, dir.join("discriminator.model"))?;
    std::fs::write(
        dir.join("cgan.manifest"),
        encode_manifest(&cgan.config, &cgan.baseline_ref),
    )?;
    Ok(())
}

/// Loads a persisted pair back. Telemetry is not part of the manifest and
/// comes back empty.
pub fn load_cgan(dir: impl AsRef<Path>) -> Result<TrainedCGan> {
    let dir = dir.as_ref();
    let (config, baseline_ref) =
        parse_manifest(&std::fs::read_to_string(dir.join("cgan.manifest"))?)?;
    let generator = load_model(dir.join("generator.model"))?;
    let discriminator = load_model(dir.join("discriminator.model"))?;
    Ok(TrainedCGan {
        generator,
        discriminator,
        baseline_ref,
        telemetry: Vec::new(),
        config,
    })
}

#[cfg(test)]
mod tests;
