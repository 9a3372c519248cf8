//! Exact t-SNE for the real-versus-fake distribution analysis.
//!
//! High-dimensional affinities are per-point conditional Gaussians whose
//! bandwidths are bisected until `2^entropy` hits the requested perplexity;
//! the symmetrized matrix is embedded into 2-D by minimizing the KL
//! divergence to a Student-t (one degree of freedom) kernel with momentum
//! gradient descent and early exaggeration. Everything is the plain O(n^2)
//! computation — no tree approximations — so the gradient stays exactly
//! checkable against finite differences.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Distribution;

use crate::cgan::FakeDataset;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

/// Floor applied to Q entries inside KL and gradient computations.
const Q_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration_factor: f64,
    pub early_exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration_factor: 12.0,
            early_exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.perplexity.is_finite() && self.perplexity > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "perplexity must be > 1, got {}",
                self.perplexity
            )));
        }
        if self.iterations < self.early_exaggeration_iters {
            return Err(Error::InvalidConfig(format!(
                "iterations ({}) must cover the early-exaggeration phase ({})",
                self.iterations, self.early_exaggeration_iters
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(self.early_exaggeration_factor.is_finite() && self.early_exaggeration_factor >= 1.0) {
            return Err(Error::InvalidConfig(
                "early exaggeration factor must be >= 1".into(),
            ));
        }
        for m in [self.initial_momentum, self.final_momentum] {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::InvalidConfig(format!(
                    "momentum must be in [0,1), got {m}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceTag {
    Real,
    Fake,
}

impl SourceTag {
    pub fn tag(self) -> &'static str {
        match self {
            SourceTag::Real => "real",
            SourceTag::Fake => "fake",
        }
    }
}

/// 2-D coordinates per input point, a source tag per point, and the final
/// KL divergence of the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingResult {
    pub coords: Matrix,
    pub source_tags: Vec<SourceTag>,
    pub final_kl: f64,
}

fn squared_distances(features: &Matrix) -> Matrix {
    let n = features.rows();
    let mut d2 = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dist: f64 = features
                .row(i)
                .iter()
                .zip(features.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2.set(i, j, dist);
            d2.set(j, i, dist);
        }
    }
    d2
}

fn has_duplicates(d2: &Matrix) -> bool {
    let n = d2.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            if d2.get(i, j) == 0.0 {
                return true;
            }
        }
    }
    false
}

/// Row-stochastic conditional affinities and the calibrated precisions
/// (`beta = 1/(2*sigma^2)`) per point. Bisection runs until `2^entropy`
/// matches the perplexity within 1e-4 or 200 steps pass.
pub fn conditional_affinities(features: &Matrix, perplexity: f64) -> Result<(Matrix, Vec<f64>)> {
    let n = features.rows();
    if n < 3 {
        return Err(Error::InvalidConfig(format!(
            "need at least 3 points, got {n}"
        )));
    }
    if !(perplexity > 1.0 && perplexity < (n - 1) as f64) {
        return Err(Error::PerplexityInfeasible { perplexity, n });
    }

    let mut d2 = squared_distances(features);
    if has_duplicates(&d2) {
        // Deterministic 1e-10 jitter lifts exact duplicates.
        let mut jittered = features.clone();
        let mut jrng = rng::stream(0xA46F, "tsne/jitter");
        for v in jittered.as_mut_slice() {
            let u: f64 = jrng.random_range(-1.0..1.0);
            *v += 1e-10 * u;
        }
        d2 = squared_distances(&jittered);
    }

    let mut p_cond = Matrix::zeros(n, n);
    let mut betas = vec![0.0; n];
    let mut energies = vec![0.0; n - 1];
    for i in 0..n {
        // Shifted energies keep exp() in range for any beta.
        let mut min_d2 = f64::INFINITY;
        for j in 0..n {
            if j != i {
                min_d2 = min_d2.min(d2.get(i, j));
            }
        }
        for (slot, j) in (0..n).filter(|&j| j != i).enumerate() {
            energies[slot] = d2.get(i, j) - min_d2;
        }

        let perp_of = |beta: f64| -> f64 {
            let mut s = 0.0;
            let mut se = 0.0;
            for &e in energies.iter() {
                let w = (-beta * e).exp();
                s += w;
                se += w * e;
            }
            let entropy = s.ln() + beta * se / s;
            entropy.exp()
        };

        let mut beta = 1.0;
        let mut lo = 0.0;
        let mut hi = f64::INFINITY;
        for _ in 0..200 {
            let perp = perp_of(beta);
            if (perp - perplexity).abs() <= 1e-4 {
                break;
            }
            if perp > perplexity {
                lo = beta;
                beta = if hi.is_infinite() { beta * 2.0 } else { (lo + hi) / 2.0 };
            } else {
                hi = beta;
                beta = (lo + hi) / 2.0;
            }
        }
        betas[i] = beta;

        let mut s = 0.0;
        let mut weights = vec![0.0; n - 1];
        for (slot, &e) in energies.iter().enumerate() {
            let w = (-beta * e).exp();
            weights[slot] = w;
            s += w;
        }
        for (slot, j) in (0..n).filter(|&j| j != i).enumerate() {
            p_cond.set(i, j, weights[slot] / s);
        }
    }
    Ok((p_cond, betas))
}

/// Symmetrized affinities `P = (P_cond + P_cond^T) / 2n`: non-negative,
/// zero-diagonal, summing to 1.
pub fn pairwise_affinities(features: &Matrix, perplexity: f64) -> Result<Matrix> {
    let (p_cond, _) = conditional_affinities(features, perplexity)?;
    let n = p_cond.rows();
    let mut p = Matrix::zeros(n, n);
    let norm = 2.0 * n as f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (p_cond.get(i, j) + p_cond.get(j, i)) / norm;
            p.set(i, j, v);
            p.set(j, i, v);
        }
    }
    Ok(p)
}

/// Gradient of `KL(P || Q)` with respect to the 2-D coordinates, plus the
/// divergence itself. `p_mult` scales P inside the gradient only (early
/// exaggeration); the reported KL always uses the unscaled P.
fn kl_gradient_scaled(p: &Matrix, coords: &Matrix, p_mult: f64) -> (Matrix, f64) {
    let n = coords.rows();
    // Pass 1: Student-t normalizer over all ordered pairs.
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let (dx, dy) = pair_delta(coords, i, j);
            z += 2.0 / (1.0 + dx * dx + dy * dy);
        }
    }

    let mut grad = Matrix::zeros(n, 2);
    let mut kl = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let (dx, dy) = pair_delta(coords, i, j);
            let w = 1.0 / (1.0 + dx * dx + dy * dy);
            let q = (w / z).max(Q_FLOOR);
            let pv = p.get(i, j);
            if pv > 0.0 {
                kl += 2.0 * pv * (pv / q).ln();
            }
            let factor = 4.0 * (p_mult * pv - q) * w;
            let gx = factor * dx;
            let gy = factor * dy;
            grad.set(i, 0, grad.get(i, 0) + gx);
            grad.set(i, 1, grad.get(i, 1) + gy);
            grad.set(j, 0, grad.get(j, 0) - gx);
            grad.set(j, 1, grad.get(j, 1) - gy);
        }
    }
    (grad, kl)
}

#[inline]
fn pair_delta(coords: &Matrix, i: usize, j: usize) -> (f64, f64) {
    let ri = coords.row(i);
    let rj = coords.row(j);
    (ri[0] - rj[0], ri[1] - rj[1])
}

/// Exact KL gradient (no exaggeration) and divergence at `coords`.
pub fn kl_gradient(p: &Matrix, coords: &Matrix) -> (Matrix, f64) {
    kl_gradient_scaled(p, coords, 1.0)
}

/// Degenerate affinities for n < 3 points: uniform over distinct pairs.
fn tiny_affinities(n: usize) -> Matrix {
    let mut p = Matrix::zeros(n, n);
    if n == 2 {
        p.set(0, 1, 0.5);
        p.set(1, 0, 0.5);
    }
    p
}

/// Embeds `features` into 2-D by momentum gradient descent on
/// `KL(P || Q)` with early exaggeration. Deterministic given the seed.
/// Source tags come back all-real; [`project_real_vs_fake`] overrides them.
pub fn tsne_embed(features: &Matrix, config: &TsneConfig) -> Result<EmbeddingResult> {
    config.validate()?;
    let n = features.rows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }

    let p = if n < 3 {
        tiny_affinities(n)
    } else {
        pairwise_affinities(features, config.perplexity)?
    };

    let mut coords = Matrix::zeros(n, 2);
    let mut init_rng = rng::stream(config.seed, "tsne/init");
    let init = rand_distr::Normal::new(0.0, 1e-2).expect("positive std");
    for v in coords.as_mut_slice() {
        *v = init.sample(&mut init_rng);
    }

    let mut velocity = Matrix::zeros(n, 2);
    let mut kl = 0.0;
    for it in 0..config.iterations {
        let p_mult = if it < config.early_exaggeration_iters {
            config.early_exaggeration_factor
        } else {
            1.0
        };
        let momentum = if it < config.momentum_switch_iter {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        let (grad, kl_now) = kl_gradient_scaled(&p, &coords, p_mult);
        kl = kl_now;
        if !kl.is_finite() {
            return Err(Error::NonFiniteLoss {
                quantity: "KL divergence",
                iteration: it,
            });
        }
        for idx in 0..n * 2 {
            let v = momentum * velocity.as_slice()[idx] - config.learning_rate * grad.as_slice()[idx];
            velocity.as_mut_slice()[idx] = v;
            coords.as_mut_slice()[idx] += v;
        }
        if !coords.is_finite() {
            return Err(Error::NonFiniteLoss {
                quantity: "embedding coordinates",
                iteration: it,
            });
        }
    }
    // Final divergence at the settled coordinates.
    let (_, final_kl) = kl_gradient(&p, &coords);
    kl = final_kl;

    Ok(EmbeddingResult {
        coords,
        source_tags: vec![SourceTag::Real; n],
        final_kl: kl,
    })
}

/// Subsamples each source, embeds the union jointly, and tags points by
/// origin (all real rows first, then all fake rows).
pub fn project_real_vs_fake(
    real: &LabeledDataset,
    fake: &FakeDataset,
    subsample: usize,
    config: &TsneConfig,
) -> Result<EmbeddingResult> {
    if subsample == 0 {
        return Err(Error::InvalidConfig("subsample must be positive".into()));
    }
    if subsample > real.len() || subsample > fake.data.len() {
        return Err(Error::InvalidConfig(format!(
            "subsample {subsample} exceeds a source ({} real, {} fake)",
            real.len(),
            fake.data.len()
        )));
    }
    if real.dim() != fake.data.dim() {
        return Err(Error::shape(
            "project_real_vs_fake",
            format!("{} feature dims", real.dim()),
            format!("{}", fake.data.dim()),
        ));
    }

    let real_rows = pick_rows(real.len(), subsample, config.seed, "tsne/subsample_real");
    let fake_rows = pick_rows(fake.data.len(), subsample, config.seed, "tsne/subsample_fake");
    let stacked = Matrix::vstack(
        &real.features().select_rows(&real_rows),
        &fake.data.features().select_rows(&fake_rows),
    )?;

    let mut result = tsne_embed(&stacked, config)?;
    result.source_tags = vec![SourceTag::Real; subsample]
        .into_iter()
        .chain(vec![SourceTag::Fake; subsample])
        .collect();
    Ok(result)
}

fn pick_rows(n: usize, take: usize, seed: u64, name: &str) -> Vec<usize> {
    let mut rng = rng::stream(seed, name);
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(&mut rng);
    let mut picked: Vec<usize> = all.into_iter().take(take).collect();
    picked.sort_unstable();
    picked
}

/// Fraction of real points whose nearest fake neighbor (in the embedding)
/// is farther than the median real-to-real nearest-neighbor distance — a
/// scalar summary of how much of the real distribution the fakes cover.
/// Returns 0 when fewer than two real points or no fake points exist.
pub fn coverage_statistic(result: &EmbeddingResult) -> f64 {
    let reals: Vec<usize> = (0..result.coords.rows())
        .filter(|&i| result.source_tags[i] == SourceTag::Real)
        .collect();
    let fakes: Vec<usize> = (0..result.coords.rows())
        .filter(|&i| result.source_tags[i] == SourceTag::Fake)
        .collect();
    if reals.len() < 2 || fakes.is_empty() {
        return 0.0;
    }

    let dist = |a: usize, b: usize| -> f64 {
        let (dx, dy) = pair_delta(&result.coords, a, b);
        (dx * dx + dy * dy).sqrt()
    };

    let mut rr_nn: Vec<f64> = reals
        .iter()
        .map(|&i| {
            reals
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| dist(i, j))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    rr_nn.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let median = if rr_nn.len() % 2 == 1 {
        rr_nn[rr_nn.len() / 2]
    } else {
        (rr_nn[rr_nn.len() / 2 - 1] + rr_nn[rr_nn.len() / 2]) / 2.0
    };

    let uncovered = reals
        .iter()
        .filter(|&&i| {
            let nn_fake = fakes.iter().map(|&j| dist(i, j)).fold(f64::INFINITY, f64::min);
            nn_fake > median
        })
        .count();
    uncovered as f64 / reals.len() as f64
}
