use super::*;
use crate::nn::loss::{binary_cross_entropy, binary_cross_entropy_deriv};

fn fixed_model(dims: &[usize], hidden: HiddenActivation, output: OutputActivation) -> MlpModel {
    init_model(dims, hidden, output, 99).unwrap()
}

#[test]
fn init_shapes_are_forced() {
    let m = init_model(&[4, 1], HiddenActivation::Relu, OutputActivation::Sigmoid, 7).unwrap();
    assert_eq!(m.weights().len(), 1);
    assert_eq!((m.weights()[0].rows(), m.weights()[0].cols()), (1, 4));
    assert_eq!(m.biases()[0], vec![0.0]);
}

#[test]
fn init_is_deterministic() {
    let a = init_model(&[4, 1], HiddenActivation::Relu, OutputActivation::Sigmoid, 7).unwrap();
    let b = init_model(&[4, 1], HiddenActivation::Relu, OutputActivation::Sigmoid, 7).unwrap();
    assert_eq!(a, b);
}

#[test]
fn init_variance_matches_fan_in_scale() {
    // tanh scale: variance 1/fan_in = 1/100 over the 6400 first-layer entries.
    let m = init_model(&[100, 64, 2], HiddenActivation::Tanh, OutputActivation::Softmax, 1).unwrap();
    let w = m.weights()[0].as_slice();
    assert_eq!(w.len(), 6400);
    let mean: f64 = w.iter().sum::<f64>() / w.len() as f64;
    let var: f64 = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.len() as f64;
    let target = 1.0 / 100.0;
    assert!(
        (var - target).abs() < 0.3 * target,
        "sample variance {var} outside 30% of {target}"
    );
}

#[test]
fn init_rejects_bad_dims() {
    assert!(init_model(&[4], HiddenActivation::Relu, OutputActivation::Linear, 0).is_err());
    assert!(init_model(&[4, 0, 2], HiddenActivation::Relu, OutputActivation::Linear, 0).is_err());
    assert!(init_model(&[], HiddenActivation::Relu, OutputActivation::Linear, 0).is_err());
}

#[test]
fn zero_model_softmax_is_uniform() {
    let mut m = fixed_model(&[3, 2], HiddenActivation::Tanh, OutputActivation::Softmax);
    for w in m.weights_mut() {
        w.as_mut_slice().fill(0.0);
    }
    let out = m
        .forward(&Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![4.0, 4.0, 4.0]]).unwrap())
        .unwrap();
    for r in 0..out.rows() {
        assert!((out.get(r, 0) - 0.5).abs() < 1e-15);
        assert!((out.get(r, 1) - 0.5).abs() < 1e-15);
    }
}

#[test]
fn identity_layer_passes_input_through() {
    let mut m = fixed_model(&[3, 3], HiddenActivation::Tanh, OutputActivation::Linear);
    for w in m.weights_mut() {
        w.as_mut_slice().fill(0.0);
    }
    for i in 0..3 {
        m.weights_mut()[0].set(i, i, 1.0);
    }
    let out = m.forward(&Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap()).unwrap();
    assert_eq!(out.row(0), &[1.0, 2.0, 3.0]);
}

#[test]
fn forward_rejects_dim_mismatch() {
    let m = fixed_model(&[3, 2], HiddenActivation::Tanh, OutputActivation::Linear);
    let err = m.forward(&Matrix::zeros(1, 4)).unwrap_err();
    assert!(matches!(err, crate::error::Error::ShapeMismatch { .. }));
}

/// Independent forward oracle: plain nested-loop affine + activation chain
/// written against raw Vecs, sharing nothing with `MlpModel::forward`.
fn oracle_forward(m: &MlpModel, input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    let last = m.num_layers() - 1;
    for l in 0..m.num_layers() {
        let w = &m.weights()[l];
        let mut z = vec![0.0; w.rows()];
        for (o, zo) in z.iter_mut().enumerate() {
            *zo = m.biases()[l][o];
            for i in 0..w.cols() {
                *zo += w.get(o, i) * x[i];
            }
        }
        if l < last {
            for v in &mut z {
                match m.hidden_activation() {
                    HiddenActivation::Relu => *v = v.max(0.0),
                    HiddenActivation::Tanh => *v = v.tanh(),
                }
            }
        } else {
            match m.output_activation() {
                OutputActivation::Linear => {}
                OutputActivation::Sigmoid => {
                    for v in &mut z {
                        *v = 1.0 / (1.0 + (-*v).exp());
                    }
                }
                OutputActivation::Softmax => {
                    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for v in &mut z {
                        *v = (*v - max).exp();
                        s += *v;
                    }
                    for v in &mut z {
                        *v /= s;
                    }
                }
            }
        }
        x = z;
    }
    x
}

#[test]
fn forward_matches_independent_oracle() {
    let m = fixed_model(&[5, 7, 4, 3], HiddenActivation::Tanh, OutputActivation::Softmax);
    let input = vec![0.3, -1.2, 0.8, 2.0, -0.4];
    let got = m.forward(&Matrix::from_rows(&[input.clone()]).unwrap()).unwrap();
    let want = oracle_forward(&m, &input);
    for (a, b) in got.row(0).iter().zip(&want) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn softmax_rows_normalize_and_sigmoid_stays_open() {
    let m = fixed_model(&[6, 8, 3], HiddenActivation::Relu, OutputActivation::Softmax);
    let x = standard_normal(32, 6, &mut crate::rng::stream(5, "t"));
    let out = m.forward(&x).unwrap();
    for r in 0..out.rows() {
        let s: f64 = out.row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(out.row(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    let d = fixed_model(&[6, 8, 1], HiddenActivation::Tanh, OutputActivation::Sigmoid);
    let out = d.forward(&x).unwrap();
    assert!(out.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn zero_loss_grad_gives_zero_param_grads() {
    let m = fixed_model(&[4, 6, 2], HiddenActivation::Tanh, OutputActivation::Softmax);
    let x = standard_normal(3, 4, &mut crate::rng::stream(6, "t"));
    let trace = m.forward_traced(&x).unwrap();
    let (grads, gx) = m.backward(&x, &trace, &Matrix::zeros(3, 2)).unwrap();
    for idx in 0..m.param_count() {
        assert_eq!(grads.param(idx), 0.0);
    }
    assert!(gx.as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn single_linear_layer_matches_closed_form() {
    // Squared error on one sample: dL/dW = 2*(pred - target) * input^T.
    let mut m = fixed_model(&[3, 1], HiddenActivation::Tanh, OutputActivation::Linear);
    m.weights_mut()[0].row_mut(0).copy_from_slice(&[0.5, -0.25, 1.5]);
    m.biases_mut()[0][0] = 0.75;
    let input = [2.0, -1.0, 0.5];
    let target = 1.0;
    let x = Matrix::from_rows(&[input.to_vec()]).unwrap();
    let trace = m.forward_traced(&x).unwrap();
    let pred = trace.output().get(0, 0);
    let loss_grad = Matrix::from_rows(&[vec![2.0 * (pred - target)]]).unwrap();
    let (grads, _) = m.backward(&x, &trace, &loss_grad).unwrap();
    for i in 0..3 {
        let expected = 2.0 * (pred - target) * input[i];
        assert!((grads.weights[0].get(0, i) - expected).abs() < 1e-12);
    }
    assert!((grads.biases[0][0] - 2.0 * (pred - target)).abs() < 1e-12);
}

/// Central finite differences over every parameter of `model` for the given
/// scalar loss. The loss closure sees the (possibly perturbed) model only.
pub(crate) fn finite_difference_check(
    model: &MlpModel,
    loss: &dyn Fn(&MlpModel) -> f64,
    analytic: &Gradients,
    h: f64,
    rel_tol: f64,
) {
    let mut probe = model.clone();
    for idx in 0..model.param_count() {
        let orig = probe.param(idx);
        probe.set_param(idx, orig + h);
        let plus = loss(&probe);
        probe.set_param(idx, orig - h);
        let minus = loss(&probe);
        probe.set_param(idx, orig);
        let numeric = (plus - minus) / (2.0 * h);
        let exact = analytic.param(idx);
        let denom = exact.abs().max(numeric.abs()).max(1e-8);
        assert!(
            (numeric - exact).abs() / denom <= rel_tol,
            "param {idx}: analytic {exact} vs numeric {numeric}"
        );
    }
}

#[test]
fn backward_matches_finite_differences_tanh_softmax() {
    let m = fixed_model(&[4, 6, 5, 3], HiddenActivation::Tanh, OutputActivation::Softmax);
    let x = standard_normal(2, 4, &mut crate::rng::stream(8, "fd"));
    let target = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();

    let loss_of = |model: &MlpModel| -> f64 {
        let out = model.forward(&x).unwrap();
        (0..out.rows())
            .map(|r| loss::categorical_cross_entropy(out.row(r), target.row(r)).unwrap())
            .sum::<f64>()
            / out.rows() as f64
    };

    let trace = m.forward_traced(&x).unwrap();
    let out = trace.output();
    let mut g = Matrix::zeros(2, 3);
    for r in 0..2 {
        let row = loss::categorical_cross_entropy_grad(out.row(r), target.row(r)).unwrap();
        for (c, v) in row.iter().enumerate() {
            g.set(r, c, v / 2.0);
        }
    }
    let (grads, _) = m.backward(&x, &trace, &g).unwrap();
    finite_difference_check(&m, &loss_of, &grads, 1e-5, 1e-4);
}

#[test]
fn backward_matches_finite_differences_relu_sigmoid() {
    // Fixed weights keep every pre-activation well away from the relu kink,
    // so central differences stay valid.
    let mut m = fixed_model(&[3, 4, 1], HiddenActivation::Relu, OutputActivation::Sigmoid);
    let w0 = [0.7, -0.3, 0.5, -0.6, 0.4, 0.8, 0.3, -0.7, 0.6, 0.5, 0.9, -0.4];
    m.weights_mut()[0].as_mut_slice().copy_from_slice(&w0);
    m.biases_mut()[0].copy_from_slice(&[0.1, -0.2, 0.3, 0.15]);
    m.weights_mut()[1].as_mut_slice().copy_from_slice(&[0.6, -0.5, 0.7, 0.4]);
    m.biases_mut()[1][0] = 0.05;
    let x = Matrix::from_rows(&[vec![1.0, -1.0, 0.5]]).unwrap();

    let trace = m.forward_traced(&x).unwrap();
    let hidden = &trace.layer_outputs[0];
    // Confirm the kink-distance guard the comment above promises.
    let pre_abs_min = (0..4)
        .map(|i| {
            let w = &m.weights()[0];
            let z: f64 = (0..3).map(|j| w.get(i, j) * x.get(0, j)).sum::<f64>() + m.biases()[0][i];
            z.abs()
        })
        .fold(f64::INFINITY, f64::min);
    assert!(pre_abs_min > 1e-3, "test setup drifted toward the relu kink");
    let _ = hidden;

    let target = 1.0;
    let loss_of = |model: &MlpModel| -> f64 {
        let p = model.forward(&x).unwrap().get(0, 0);
        binary_cross_entropy(p, target)
    };
    let p = trace.output().get(0, 0);
    let g = Matrix::from_rows(&[vec![binary_cross_entropy_deriv(p, target)]]).unwrap();
    let (grads, _) = m.backward(&x, &trace, &g).unwrap();
    finite_difference_check(&m, &loss_of, &grads, 1e-5, 1e-4);
}

#[test]
fn input_gradient_matches_finite_differences() {
    // The generator update depends on dL/d(inputs); check it directly.
    let m = fixed_model(&[4, 5, 2], HiddenActivation::Tanh, OutputActivation::Softmax);
    let x0 = vec![0.4, -0.9, 1.1, 0.2];
    let target = [0.0, 1.0];

    let loss_at = |input: &[f64]| -> f64 {
        let out = m.forward(&Matrix::from_rows(&[input.to_vec()]).unwrap()).unwrap();
        loss::categorical_cross_entropy(out.row(0), &target).unwrap()
    };

    let x = Matrix::from_rows(&[x0.clone()]).unwrap();
    let trace = m.forward_traced(&x).unwrap();
    let g_row = loss::categorical_cross_entropy_grad(trace.output().row(0), &target).unwrap();
    let g = Matrix::from_rows(&[g_row]).unwrap();
    let (_, gx) = m.backward(&x, &trace, &g).unwrap();

    let h = 1e-5;
    for i in 0..4 {
        let mut plus = x0.clone();
        plus[i] += h;
        let mut minus = x0.clone();
        minus[i] -= h;
        let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        let exact = gx.get(0, i);
        assert!(
            (numeric - exact).abs() / exact.abs().max(1e-8) <= 1e-4,
            "input {i}: analytic {exact} vs numeric {numeric}"
        );
    }
}

#[test]
fn batch_rejects_row_mismatch_and_nan() {
    assert!(Batch::new(Matrix::zeros(2, 3), Matrix::zeros(3, 1)).is_err());
    let mut bad = Matrix::zeros(2, 3);
    bad.set(0, 0, f64::NAN);
    assert!(Batch::new(bad, Matrix::zeros(2, 1)).is_err());
}
