//! Cross-entropy losses and their derivatives.
//!
//! Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before any log,
//! so both losses are finite and non-negative for every input.

use crate::error::{Error, Result};

/// Clamping bound applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `-target*ln(p) - (1-target)*ln(1-p)` with `p` clamped.
pub fn binary_cross_entropy(predicted: f64, target: f64) -> f64 {
    let p = clamp_prob(predicted);
    -target * p.ln() - (1.0 - target) * (1.0 - p).ln()
}

/// d(BCE)/d(predicted). Zero where the clamp is active, matching the
/// piecewise-constant loss there.
pub fn binary_cross_entropy_deriv(predicted: f64, target: f64) -> f64 {
    if predicted <= PROB_EPS || predicted >= 1.0 - PROB_EPS {
        return 0.0;
    }
    -target / predicted + (1.0 - target) / (1.0 - predicted)
}

/// `-sum(target * ln(clamped predicted))`. Errors on length mismatch.
pub fn categorical_cross_entropy(predicted: &[f64], target_onehot: &[f64]) -> Result<f64> {
    if predicted.len() != target_onehot.len() {
        return Err(Error::shape(
            "categorical_cross_entropy",
            format!("{} entries", target_onehot.len()),
            format!("{}", predicted.len()),
        ));
    }
    Ok(predicted
        .iter()
        .zip(target_onehot)
        .map(|(&p, &t)| -t * p.clamp(PROB_EPS, 1.0).ln())
        .sum())
}

/// d(CCE)/d(predicted_j) = `-t_j / p_j` (with the clamp's flat regions
/// giving zero derivative).
pub fn categorical_cross_entropy_grad(predicted: &[f64], target_onehot: &[f64]) -> Result<Vec<f64>> {
    if predicted.len() != target_onehot.len() {
        return Err(Error::shape(
            "categorical_cross_entropy_grad",
            format!("{} entries", target_onehot.len()),
            format!("{}", predicted.len()),
        ));
    }
    Ok(predicted
        .iter()
        .zip(target_onehot)
        .map(|(&p, &t)| {
            if !(PROB_EPS..=1.0).contains(&p) {
                0.0
            } else {
                -t / p
            }
        })
        .collect())
}
