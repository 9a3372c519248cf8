//! Measurement battery: classifier training, accuracy with a binomial
//! significance test against chance, confidence-score bagging with weights
//! tuned on a held-out carve, and the dataset-size sweep that scores
//! generated data both as a test set and as a training set.

use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

use crate::cgan::{generate, train_cgan, CGanConfig};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::loss::categorical_cross_entropy_grad;
use crate::nn::optim::{optimizer_step, OptimizerKind, OptimizerState};
use crate::nn::{init_model, HiddenActivation, MlpModel, OutputActivation};
use crate::rng;

/// Accuracy plus a one-sided significance test against chance.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub n: usize,
    pub p_value_vs_chance: f64,
    pub significant_at_5pct: bool,
}

/// Which tail computation backs the significance test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignificanceTest {
    /// One-sided normal approximation:
    /// `z = (acc - chance) / sqrt(chance*(1-chance)/n)`, `p = 1 - Phi(z)`.
    NormalApprox,
    /// Exact binomial upper tail `P[X >= correct]`, for small n.
    ExactBinomial,
}

/// Trains a softmax classifier by minimizing categorical cross-entropy with
/// Adam. `dims` is the full layer layout: `dims[0]` must equal the feature
/// dim and `dims[last]` the class count. `epochs = 0` returns the freshly
/// initialized model.
pub fn train_classifier(
    train: &LabeledDataset,
    dims: &[usize],
    epochs: usize,
    seed: u64,
) -> Result<MlpModel> {
    train_classifier_with(train, dims, epochs, seed, OptimizerKind::adam(), 1e-3, 64)
}

pub fn train_classifier_with(
    train: &LabeledDataset,
    dims: &[usize],
    epochs: usize,
    seed: u64,
    optimizer: OptimizerKind,
    learning_rate: f64,
    batch_size: usize,
) -> Result<MlpModel> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dims.first() != Some(&train.dim()) || dims.last() != Some(&train.num_classes()) {
        return Err(Error::shape(
            "train_classifier",
            format!("dims [{}, ..., {}]", train.dim(), train.num_classes()),
            format!("{dims:?}"),
        ));
    }
    let mut model = init_model(
        dims,
        HiddenActivation::Tanh,
        OutputActivation::Softmax,
        rng::substream_seed(seed, "classifier/init"),
    )?;
    if epochs == 0 {
        return Ok(model);
    }

    let batch_size = batch_size.min(train.len()).max(1);
    let mut state = OptimizerState::new(optimizer, learning_rate, &model)?;
    let mut sampler = crate::data::BatchSampler::new(train.len(), seed, "classifier/batches");
    let steps_per_epoch = train.len().div_ceil(batch_size);

    for _ in 0..epochs {
        for _ in 0..steps_per_epoch {
            let batch = sampler.sample_batch(train, batch_size)?;
            let trace = model.forward_traced(&batch.inputs)?;
            let probs = trace.output();
            let b = batch.len();
            let mut g = Matrix::zeros(b, train.num_classes());
            for r in 0..b {
                let row = categorical_cross_entropy_grad(probs.row(r), batch.targets.row(r))?;
                for (c, v) in row.iter().enumerate() {
                    g.set(r, c, v / b as f64);
                }
            }
            let (grads, _) = model.backward(&batch.inputs, &trace, &g)?;
            optimizer_step(&mut model, &grads, &mut state)?;
        }
    }
    Ok(model)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Class predictions by argmax over the model's output probabilities.
pub fn predict_classes(model: &MlpModel, features: &Matrix) -> Result<Vec<usize>> {
    let probs = model.forward(features)?;
    Ok((0..probs.rows()).map(|r| argmax(probs.row(r))).collect())
}

/// Accuracy on `test` with the normal-approximation significance test.
pub fn evaluate(model: &MlpModel, test: &LabeledDataset, chance: f64) -> Result<EvalReport> {
    evaluate_with(model, test, chance, SignificanceTest::NormalApprox)
}

pub fn evaluate_with(
    model: &MlpModel,
    test: &LabeledDataset,
    chance: f64,
    significance: SignificanceTest,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(chance > 0.0 && chance < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "chance must be in (0,1), got {chance}"
        )));
    }
    let predictions = predict_classes(model, test.features())?;
    let correct = predictions
        .iter()
        .zip(test.labels())
        .filter(|(p, l)| p == l)
        .count();
    let n = test.len();
    let accuracy = correct as f64 / n as f64;
    let p_value = p_value_above_chance(correct, n, chance, significance);
    Ok(EvalReport {
        accuracy,
        n,
        p_value_vs_chance: p_value,
        significant_at_5pct: p_value < 0.05,
    })
}

/// One-sided p-value for `correct / n` exceeding `chance`.
pub fn p_value_above_chance(
    correct: usize,
    n: usize,
    chance: f64,
    significance: SignificanceTest,
) -> f64 {
    match significance {
        SignificanceTest::NormalApprox => {
            let accuracy = correct as f64 / n as f64;
            let z = (accuracy - chance) / (chance * (1.0 - chance) / n as f64).sqrt();
            let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
            1.0 - std_normal.cdf(z)
        }
        SignificanceTest::ExactBinomial => {
            if correct == 0 {
                return 1.0;
            }
            let dist = Binomial::new(chance, n as u64).expect("valid binomial");
            // P[X >= correct] = P[X > correct - 1]
            dist.sf(correct as u64 - 1)
        }
    }
}

/// Non-negative per-classifier weights on the probability simplex, plus the
/// indices of the held-out rows they were tuned on.
#[derive(Debug, Clone, PartialEq)]
pub struct BagWeights {
    pub weights: Vec<f64>,
    pub holdout_indices: Vec<usize>,
}

/// Stratified carve of `fraction` of `ds` for weight tuning. Returns
/// `(fit, holdout, holdout_indices)`; the fit portion is the complement.
pub fn carve_holdout(
    ds: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "holdout fraction must be in (0,1), got {fraction}"
        )));
    }
    let mut rng = rng::stream(seed, "eval/holdout");
    use rand::seq::SliceRandom;
    let fit_fraction = 1.0 - fraction;
    let mut fit_idx: Vec<usize> = Vec::new();
    let mut hold_idx: Vec<usize> = Vec::new();
    for class in 0..ds.num_classes() {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == class).collect();
        members.shuffle(&mut rng);
        let take = (fit_fraction * members.len() as f64).round() as usize;
        fit_idx.extend_from_slice(&members[..take]);
        hold_idx.extend_from_slice(&members[take..]);
    }
    if fit_idx.is_empty() || hold_idx.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "holdout fraction {fraction} leaves an empty side for {} samples",
            ds.len()
        )));
    }
    fit_idx.sort_unstable();
    hold_idx.sort_unstable();
    Ok((ds.subset(&fit_idx), ds.subset(&hold_idx), hold_idx))
}

/// Exhaustive grid search over the weight simplex at resolution `grid_step`
/// for the highest validation accuracy of the probability-weighted ensemble.
/// Ties break toward the most uniform weights.
pub fn tune_bag_weights(
    models: &[&MlpModel],
    validation: &LabeledDataset,
    holdout_indices: Vec<usize>,
    grid_step: f64,
) -> Result<BagWeights> {
    if models.is_empty() {
        return Err(Error::InvalidConfig("no models to bag".into()));
    }
    if !(2..=3).contains(&models.len()) {
        return Err(Error::InvalidConfig(format!(
            "bagging expects 2 or 3 models, got {}",
            models.len()
        )));
    }
    if validation.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "grid_step must be in (0,1], got {grid_step}"
        )));
    }
    let steps = (1.0 / grid_step).round() as usize;
    let probs: Vec<Matrix> = models
        .iter()
        .map(|m| m.forward(validation.features()))
        .collect::<Result<_>>()?;
    let k = validation.num_classes();
    if probs.iter().any(|p| p.cols() != k) {
        return Err(Error::shape(
            "tune_bag_weights",
            format!("{k} class probabilities"),
            "model output".to_string(),
        ));
    }

    let uniform = 1.0 / models.len() as f64;
    let mut best: Option<(usize, f64, Vec<f64>)> = None; // (correct, spread, weights)
    let mut consider = |weights: Vec<f64>| {
        let correct = weighted_correct(&probs, &weights, validation);
        let spread: f64 = weights.iter().map(|w| (w - uniform) * (w - uniform)).sum();
        let better = match &best {
            None => true,
            Some((bc, bs, _)) => correct > *bc || (correct == *bc && spread < *bs),
        };
        if better {
            best = Some((correct, spread, weights));
        }
    };

    if models.len() == 2 {
        for i in 0..=steps {
            let w0 = i as f64 / steps as f64;
            consider(vec![w0, 1.0 - w0]);
        }
    } else {
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let l = steps - i - j;
                consider(vec![
                    i as f64 / steps as f64,
                    j as f64 / steps as f64,
                    l as f64 / steps as f64,
                ]);
            }
        }
    }

    let (_, _, weights) = best.expect("grid is nonempty");
    Ok(BagWeights {
        weights,
        holdout_indices,
    })
}

fn weighted_correct(probs: &[Matrix], weights: &[f64], ds: &LabeledDataset) -> usize {
    let k = ds.num_classes();
    let mut correct = 0;
    let mut combined = vec![0.0; k];
    for r in 0..ds.len() {
        combined.fill(0.0);
        for (p, &w) in probs.iter().zip(weights) {
            for (c, v) in p.row(r).iter().enumerate() {
                combined[c] += w * v;
            }
        }
        if argmax(&combined) == ds.labels()[r] {
            correct += 1;
        }
    }
    correct
}

/// Argmax over the weighted sum of the models' output probabilities.
pub fn bag_predict(models: &[&MlpModel], weights: &[f64], features: &Matrix) -> Result<Vec<usize>> {
    if models.is_empty() || models.len() != weights.len() {
        return Err(Error::shape(
            "bag_predict",
            format!("{} weights", models.len()),
            format!("{}", weights.len()),
        ));
    }
    let k = models[0].output_dim();
    if models.iter().any(|m| m.output_dim() != k) {
        return Err(Error::shape(
            "bag_predict",
            format!("{k} output classes"),
            "mismatched model outputs".to_string(),
        ));
    }
    let probs: Vec<Matrix> = models
        .iter()
        .map(|m| m.forward(features))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(features.rows());
    let mut combined = vec![0.0; k];
    for r in 0..features.rows() {
        combined.fill(0.0);
        for (p, &w) in probs.iter().zip(weights) {
            for (c, v) in p.row(r).iter().enumerate() {
                combined[c] += w * v;
            }
        }
        out.push(argmax(&combined));
    }
    Ok(out)
}

/// One arm of the dataset-size sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub n: usize,
    /// Accuracy of the full-data reference classifier on generated samples,
    /// scoring the conditioning labels as ground truth.
    pub acc_fake_as_test: f64,
    /// Accuracy on the real test set of a classifier trained on generated
    /// samples only.
    pub acc_fake_as_train: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
}

impl SweepResult {
    /// CSV: `N,acc_fake_as_test,acc_fake_as_train`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,acc_fake_as_test,acc_fake_as_train\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{}\n", r.n, r.acc_fake_as_test, r.acc_fake_as_train));
        }
        out
    }
}

/// Knobs for [`size_sweep`] beyond the conditional-GAN config.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    /// Total generated samples per arm, balanced across classes.
    pub n_fake: usize,
    /// Hidden widths for every classifier trained by the sweep.
    pub classifier_hidden: Vec<usize>,
    pub classifier_epochs: usize,
    pub seed: u64,
    /// Upper bound on concurrently running arms; 0 means one per arm.
    pub threads: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            n_fake: 10_000,
            classifier_hidden: vec![32],
            classifier_epochs: 40,
            seed: 0,
            threads: 1,
        }
    }
}

/// Trains a reference classifier on the full training set once, then for
/// each `N` trains a baseline and a conditional GAN on the (nested) first-N
/// subset, generates `n_fake` class-balanced samples, and records the
/// fake-as-test and fake-as-train accuracies.
pub fn size_sweep(
    full_train: &LabeledDataset,
    test: &LabeledDataset,
    ns: &[usize],
    cgan_config: &CGanConfig,
    opts: &SweepOptions,
) -> Result<SweepResult> {
    if ns.is_empty() {
        return Err(Error::InvalidConfig("no sweep sizes given".into()));
    }
    if ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(format!(
            "sweep sizes must be strictly increasing, got {ns:?}"
        )));
    }
    let max_n = *ns.last().expect("nonempty");
    if max_n > full_train.len() {
        return Err(Error::InvalidConfig(format!(
            "sweep size {max_n} exceeds the {} available training samples",
            full_train.len()
        )));
    }
    let k = full_train.num_classes();
    if opts.n_fake < k {
        return Err(Error::InvalidConfig(format!(
            "n_fake {} cannot balance {k} classes",
            opts.n_fake
        )));
    }

    // Nested subsets: per-class shuffles interleaved round-robin, so every
    // prefix is close to class-balanced and contains all smaller prefixes.
    let order = interleaved_order(full_train, opts.seed);

    let dims = classifier_dims(&opts.classifier_hidden, full_train.dim(), k);
    let reference = train_classifier(
        full_train,
        &dims,
        opts.classifier_epochs,
        rng::substream_seed(opts.seed, "sweep/reference"),
    )?;
    let chance = 1.0 / k as f64;

    let run_arm = |n: usize| -> Result<SweepRecord> {
        let arm_seed = rng::substream_seed(opts.seed, &format!("sweep/arm/{n}"));
        let subset = full_train.subset(&order[..n]);
        let baseline = train_classifier(
            &subset,
            &dims,
            opts.classifier_epochs,
            rng::substream_seed(arm_seed, "baseline"),
        )?;
        let mut config = cgan_config.clone();
        config.seed = rng::substream_seed(arm_seed, "cgan");
        let trained = train_cgan(&subset, &subset, &baseline, &config)?;

        let per_class = balanced_counts(opts.n_fake, k);
        let fake = generate(&trained, &per_class, &mut rng::stream(arm_seed, "generate"))?;

        let acc_fake_as_test = evaluate(&reference, &fake.data, chance)?.accuracy;
        let fake_classifier = train_classifier(
            &fake.data,
            &dims,
            opts.classifier_epochs,
            rng::substream_seed(arm_seed, "fake_classifier"),
        )?;
        let acc_fake_as_train = evaluate(&fake_classifier, test, chance)?.accuracy;
        Ok(SweepRecord {
            n,
            acc_fake_as_test,
            acc_fake_as_train,
        })
    };

    let cap = if opts.threads == 0 { ns.len() } else { opts.threads };
    let mut records: Vec<SweepRecord> = Vec::with_capacity(ns.len());
    for chunk in ns.chunks(cap.max(1)) {
        let chunk_results: Vec<Result<SweepRecord>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk.iter().map(|&n| scope.spawn(move || run_arm(n))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep arm panicked"))
                .collect()
        });
        for r in chunk_results {
            records.push(r?);
        }
    }
    Ok(SweepResult { records })
}

pub(crate) fn classifier_dims(hidden: &[usize], d: usize, k: usize) -> Vec<usize> {
    let mut dims = vec![d];
    dims.extend_from_slice(hidden);
    dims.push(k);
    dims
}

/// Splits `total` as evenly as possible over `k` classes; earlier classes
/// absorb the remainder.
pub(crate) fn balanced_counts(total: usize, k: usize) -> Vec<usize> {
    let base = total / k;
    let extra = total % k;
    (0..k).map(|c| base + usize::from(c < extra)).collect()
}

fn interleaved_order(ds: &LabeledDataset, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut rng = rng::stream(seed, "sweep/order");
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (i, &l) in ds.labels().iter().enumerate() {
        per_class[l].push(i);
    }
    for members in &mut per_class {
        members.shuffle(&mut rng);
    }
    let mut order = Vec::with_capacity(ds.len());
    let mut cursors = vec![0usize; per_class.len()];
    while order.len() < ds.len() {
        for (class, members) in per_class.iter().enumerate() {
            if cursors[class] < members.len() {
                order.push(members[cursors[class]]);
                cursors[class] += 1;
            }
        }
    }
    order
}

/// One row of the classifier report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub classifier: String,
    pub dataset: String,
    pub n: usize,
    pub accuracy: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Report CSV: `classifier,dataset,n,accuracy,p_value,significant`.
pub fn report_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("classifier,dataset,n,accuracy,p_value,significant\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.classifier, r.dataset, r.n, r.accuracy, r.p_value, r.significant
        ));
    }
    out
}
