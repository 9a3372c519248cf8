//! Minimal dense-network engine.
//!
//! One fixed graph: a stack of affine layers with a shared hidden activation
//! and a per-model output activation. Forward, exact backprop (including the
//! gradient with respect to the *inputs*, which the GAN generator update
//! needs to chain through the discriminator and classifier), losses,
//! optimizers, and a versioned file format.
//!
//! Models are immutable value objects for inference; training owns a single
//! `&mut MlpModel`.

pub mod io;
pub mod loss;
pub mod optim;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenActivation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Sigmoid,
    Softmax,
    Linear,
}

impl HiddenActivation {
    pub fn tag(self) -> &'static str {
        match self {
            HiddenActivation::Relu => "relu",
            HiddenActivation::Tanh => "tanh",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "relu" => Ok(HiddenActivation::Relu),
            "tanh" => Ok(HiddenActivation::Tanh),
            other => Err(Error::MalformedFile(format!(
                "unknown hidden activation {other:?}"
            ))),
        }
    }
}

impl OutputActivation {
    pub fn tag(self) -> &'static str {
        match self {
            OutputActivation::Sigmoid => "sigmoid",
            OutputActivation::Softmax => "softmax",
            OutputActivation::Linear => "linear",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "sigmoid" => Ok(OutputActivation::Sigmoid),
            "softmax" => Ok(OutputActivation::Softmax),
            "linear" => Ok(OutputActivation::Linear),
            other => Err(Error::MalformedFile(format!(
                "unknown output activation {other:?}"
            ))),
        }
    }
}

/// A feed-forward network. `weights[i]` has shape `dims[i+1] x dims[i]`
/// (row-major, out x in), `biases[i]` has length `dims[i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    hidden_activation: HiddenActivation,
    output_activation: OutputActivation,
}

/// Per-layer post-activation outputs of a forward pass, kept for backprop.
pub struct ForwardTrace {
    layer_outputs: Vec<Matrix>,
}

impl ForwardTrace {
    /// Final network output (post output-activation).
    pub fn output(&self) -> &Matrix {
        self.layer_outputs.last().expect("trace has at least one layer")
    }
}

/// Parameter gradients, shaped exactly like the model's parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            weights: model
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Reads a gradient entry by flat index, mirroring [`MlpModel::param`].
    pub fn param(&self, mut idx: usize) -> f64 {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if idx < w.as_slice().len() {
                return w.as_slice()[idx];
            }
            idx -= w.as_slice().len();
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("gradient index out of range");
    }

    /// Adds `lambda * other` into `self`.
    pub fn add_scaled(&mut self, other: &Gradients, lambda: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += lambda * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += lambda * y;
            }
        }
    }
}

/// Initializes a model with fan-in-scaled zero-mean Gaussian weights
/// (variance `2/fan_in` for relu, `1/fan_in` for tanh) and zero biases.
/// Deterministic given `seed`.
pub fn init_model(
    layer_dims: &[usize],
    hidden_activation: HiddenActivation,
    output_activation: OutputActivation,
    seed: u64,
) -> Result<MlpModel> {
    if layer_dims.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least input and output dims, got {layer_dims:?}"
        )));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidConfig(format!(
            "all layer dims must be positive, got {layer_dims:?}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(layer_dims.len() - 1);
    let mut biases = Vec::with_capacity(layer_dims.len() - 1);
    for win in layer_dims.windows(2) {
        let (fan_in, fan_out) = (win[0], win[1]);
        let variance = match hidden_activation {
            HiddenActivation::Relu => 2.0 / fan_in as f64,
            HiddenActivation::Tanh => 1.0 / fan_in as f64,
        };
        let dist = Normal::new(0.0, variance.sqrt()).expect("positive std");
        let mut w = Matrix::zeros(fan_out, fan_in);
        for v in w.as_mut_slice() {
            *v = dist.sample(&mut rng);
        }
        weights.push(w);
        biases.push(vec![0.0; fan_out]);
    }

    Ok(MlpModel {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
        hidden_activation,
        output_activation,
    })
}

impl MlpModel {
    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("dims nonempty")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn hidden_activation(&self) -> HiddenActivation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub(crate) fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.as_slice().len()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Reads a parameter by flat index (per layer: weights row-major, then
    /// biases). The ordering matches [`Gradients::param`] and the file format.
    pub fn param(&self, mut idx: usize) -> f64 {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if idx < w.as_slice().len() {
                return w.as_slice()[idx];
            }
            idx -= w.as_slice().len();
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Writes a parameter by flat index. See [`MlpModel::param`].
    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            if idx < w.as_slice().len() {
                w.as_mut_slice()[idx] = value;
                return;
            }
            idx -= w.as_slice().len();
            if idx < b.len() {
                b[idx] = value;
                return;
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub(crate) fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
    ) -> Self {
        MlpModel {
            layer_dims,
            weights,
            biases,
            hidden_activation,
            output_activation,
        }
    }

    /// Forward pass over a batch (rows are samples).
    pub fn forward(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.forward_traced(inputs)?.layer_outputs.pop().expect("nonempty"))
    }

    /// Forward pass keeping every layer's post-activation output.
    pub fn forward_traced(&self, inputs: &Matrix) -> Result<ForwardTrace> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::shape(
                "forward",
                format!("{} input columns", self.input_dim()),
                format!("{}", inputs.cols()),
            ));
        }
        let batch = inputs.rows();
        let last = self.num_layers() - 1;
        let mut layer_outputs = Vec::with_capacity(self.num_layers());
        let mut x = inputs;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = Matrix::zeros(batch, w.rows());
            for r in 0..batch {
                let xin = x.row(r);
                let zrow = z.row_mut(r);
                for (o, zo) in zrow.iter_mut().enumerate() {
                    let wrow = w.row(o);
                    let mut acc = b[o];
                    for (wi, xi) in wrow.iter().zip(xin) {
                        acc += wi * xi;
                    }
                    *zo = acc;
                }
            }
            if l < last {
                apply_hidden(&mut z, self.hidden_activation);
            } else {
                apply_output(&mut z, self.output_activation);
            }
            layer_outputs.push(z);
            x = layer_outputs.last().expect("just pushed");
        }
        Ok(ForwardTrace { layer_outputs })
    }

    /// Exact backprop through the traced forward pass.
    ///
    /// `loss_grad` is dL/d(output) with the same shape as the final output.
    /// Returns parameter gradients plus dL/d(inputs), which callers chaining
    /// networks (generator through discriminator/classifier) feed onward.
    pub fn backward(
        &self,
        inputs: &Matrix,
        trace: &ForwardTrace,
        loss_grad: &Matrix,
    ) -> Result<(Gradients, Matrix)> {
        let out = trace.output();
        if loss_grad.rows() != out.rows() || loss_grad.cols() != out.cols() {
            return Err(Error::shape(
                "backward",
                format!("{}x{}", out.rows(), out.cols()),
                format!("{}x{}", loss_grad.rows(), loss_grad.cols()),
            ));
        }
        let batch = inputs.rows();
        let last = self.num_layers() - 1;
        let mut grads = Gradients::zeros_like(self);

        // dL/d(post-activation output) of the current layer.
        let mut g = loss_grad.clone();
        for l in (0..self.num_layers()).rev() {
            let y = &trace.layer_outputs[l];
            // Convert to dL/dz through the layer's activation.
            let mut dz = Matrix::zeros(batch, y.cols());
            if l == last {
                output_grad_to_dz(&g, y, self.output_activation, &mut dz);
            } else {
                hidden_grad_to_dz(&g, y, self.hidden_activation, &mut dz);
            }

            let x: &Matrix = if l == 0 { inputs } else { &trace.layer_outputs[l - 1] };
            let dw = &mut grads.weights[l];
            let db = &mut grads.biases[l];
            for r in 0..batch {
                let dzr = dz.row(r);
                let xr = x.row(r);
                for (o, &dzo) in dzr.iter().enumerate() {
                    db[o] += dzo;
                    let wrow = dw.row_mut(o);
                    for (wi, xi) in wrow.iter_mut().zip(xr) {
                        *wi += dzo * xi;
                    }
                }
            }

            // dL/dx = dz . W
            let w = &self.weights[l];
            let mut gx = Matrix::zeros(batch, w.cols());
            for r in 0..batch {
                let dzr = dz.row(r);
                let gxr = gx.row_mut(r);
                for (o, &dzo) in dzr.iter().enumerate() {
                    if dzo == 0.0 {
                        continue;
                    }
                    for (gi, wi) in gxr.iter_mut().zip(w.row(o)) {
                        *gi += dzo * wi;
                    }
                }
            }
            g = gx;
        }
        Ok((grads, g))
    }
}

fn apply_hidden(z: &mut Matrix, act: HiddenActivation) {
    match act {
        HiddenActivation::Relu => {
            for v in z.as_mut_slice() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        HiddenActivation::Tanh => {
            for v in z.as_mut_slice() {
                *v = v.tanh();
            }
        }
    }
}

fn apply_output(z: &mut Matrix, act: OutputActivation) {
    match act {
        OutputActivation::Linear => {}
        OutputActivation::Sigmoid => {
            for v in z.as_mut_slice() {
                *v = 1.0 / (1.0 + (-*v).exp());
            }
        }
        OutputActivation::Softmax => {
            let cols = z.cols();
            for r in 0..z.rows() {
                let row = z.row_mut(r);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
                let _ = cols;
            }
        }
    }
}

fn hidden_grad_to_dz(g: &Matrix, y: &Matrix, act: HiddenActivation, dz: &mut Matrix) {
    match act {
        HiddenActivation::Relu => {
            for (d, (gv, yv)) in dz
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice().iter().zip(y.as_slice()))
            {
                *d = if *yv > 0.0 { *gv } else { 0.0 };
            }
        }
        HiddenActivation::Tanh => {
            for (d, (gv, yv)) in dz
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice().iter().zip(y.as_slice()))
            {
                *d = gv * (1.0 - yv * yv);
            }
        }
    }
}

fn output_grad_to_dz(g: &Matrix, y: &Matrix, act: OutputActivation, dz: &mut Matrix) {
    match act {
        OutputActivation::Linear => {
            dz.as_mut_slice().copy_from_slice(g.as_slice());
        }
        OutputActivation::Sigmoid => {
            for (d, (gv, yv)) in dz
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice().iter().zip(y.as_slice()))
            {
                *d = gv * yv * (1.0 - yv);
            }
        }
        OutputActivation::Softmax => {
            // Row-wise Jacobian: dz_j = y_j * (g_j - sum_k g_k y_k)
            for r in 0..y.rows() {
                let yr = y.row(r);
                let gr = g.row(r);
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for (d, (yv, gv)) in dz.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                    *d = yv * (gv - dot);
                }
            }
        }
    }
}

/// One training batch: inputs and matching targets (one row per sample).
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Matrix,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::shape(
                "Batch::new",
                format!("{} target rows", inputs.rows()),
                format!("{}", targets.rows()),
            ));
        }
        if !inputs.is_finite() || !targets.is_finite() {
            return Err(Error::InvalidConfig("batch contains non-finite values".into()));
        }
        Ok(Batch { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Drives η samples: standard normal matrix of the given shape.
pub fn standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = rng.sample(rand_distr::StandardNormal);
    }
    m
}

#[cfg(test)]
pub(crate) mod tests;
