//! SGD-with-momentum and Adam parameter updates.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::{Gradients, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    /// Adam with the conventional moment coefficients.
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter optimizer buffers mirroring the model's parameter shapes.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f64,
    step_count: u64,
    m_weights: Vec<Matrix>,
    m_biases: Vec<Vec<f64>>,
    // Second moments; present only for Adam.
    v_weights: Vec<Matrix>,
    v_biases: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, model: &MlpModel) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let zeros_w = || -> Vec<Matrix> {
            model
                .weights()
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect()
        };
        let zeros_b = || -> Vec<Vec<f64>> { model.biases().iter().map(|b| vec![0.0; b.len()]).collect() };
        let adam = matches!(kind, OptimizerKind::Adam { .. });
        Ok(OptimizerState {
            kind,
            learning_rate,
            step_count: 0,
            m_weights: zeros_w(),
            m_biases: zeros_b(),
            v_weights: if adam { zeros_w() } else { Vec::new() },
            v_biases: if adam { zeros_b() } else { Vec::new() },
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }
}

/// Applies one optimizer update in place. Errors (naming the layer) if any
/// gradient entry is non-finite; the model is untouched in that case.
pub fn optimizer_step(model: &mut MlpModel, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    for (layer, (gw, gb)) in grads.weights.iter().zip(&grads.biases).enumerate() {
        if !gw.is_finite() || gb.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { layer });
        }
    }

    state.step_count += 1;
    let lr = state.learning_rate;
    match state.kind {
        OptimizerKind::SgdMomentum { momentum } => {
            for l in 0..model.num_layers() {
                sgd_update(
                    model.weights_mut()[l].as_mut_slice(),
                    grads.weights[l].as_slice(),
                    state.m_weights[l].as_mut_slice(),
                    momentum,
                    lr,
                );
                sgd_update(
                    &mut model.biases_mut()[l],
                    &grads.biases[l],
                    &mut state.m_biases[l],
                    momentum,
                    lr,
                );
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            let t = state.step_count as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            for l in 0..model.num_layers() {
                adam_update(
                    model.weights_mut()[l].as_mut_slice(),
                    grads.weights[l].as_slice(),
                    state.m_weights[l].as_mut_slice(),
                    state.v_weights[l].as_mut_slice(),
                    beta1,
                    beta2,
                    eps,
                    bc1,
                    bc2,
                    lr,
                );
                adam_update(
                    &mut model.biases_mut()[l],
                    &grads.biases[l],
                    &mut state.m_biases[l],
                    &mut state.v_biases[l],
                    beta1,
                    beta2,
                    eps,
                    bc1,
                    bc2,
                    lr,
                );
            }
        }
    }
    Ok(())
}

fn sgd_update(params: &mut [f64], grads: &[f64], velocity: &mut [f64], momentum: f64, lr: f64) {
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
    lr: f64,
) {
    for (((p, &g), mi), vi) in params.iter_mut().zip(grads).zip(m).zip(v) {
        *mi = beta1 * *mi + (1.0 - beta1) * g;
        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
        let m_hat = *mi / bc1;
        let v_hat = *vi / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
