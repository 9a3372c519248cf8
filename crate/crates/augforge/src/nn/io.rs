//! Model file format.
//!
//! Text header followed by a raw little-endian f64 payload:
//!
//! ```text
//! AUGFORGE-MLP v1
//! dims: 4 8 2
//! act: tanh softmax
//! bytes: 336
//! <little-endian f64 parameters, per layer: weights row-major, then biases>
//! ```
//!
//! The byte count line is redundant with `dims` and is cross-checked on
//! load; a mismatch is a shape-inconsistency error, distinct from truncation.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::{HiddenActivation, MlpModel, OutputActivation};

const MAGIC: &str = "AUGFORGE-MLP v1";

/// Serializes a model to the on-disk byte format.
pub fn encode_model(model: &MlpModel) -> Vec<u8> {
    let dims: Vec<String> = model.layer_dims().iter().map(ToString::to_string).collect();
    let payload_len = model.param_count() * 8;
    let mut out = Vec::with_capacity(payload_len + 96);
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(format!("dims: {}\n", dims.join(" ")).as_bytes());
    out.extend_from_slice(
        format!(
            "act: {} {}\n",
            model.hidden_activation().tag(),
            model.output_activation().tag()
        )
        .as_bytes(),
    );
    out.extend_from_slice(format!("bytes: {payload_len}\n").as_bytes());
    for (w, b) in model.weights().iter().zip(model.biases()) {
        for v in w.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses the byte format back into a model.
pub fn decode_model(bytes: &[u8]) -> Result<MlpModel> {
    let mut rest = bytes;
    let magic = take_line(&mut rest)?;
    if magic != MAGIC {
        return Err(Error::VersionMismatch {
            expected: MAGIC.to_string(),
            got: magic.chars().take(40).collect(),
        });
    }

    let dims_line = take_line(&mut rest)?;
    let dims_str = dims_line
        .strip_prefix("dims: ")
        .ok_or_else(|| Error::MalformedFile("expected `dims: ...` line".into()))?;
    let layer_dims: Vec<usize> = dims_str
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::MalformedFile(format!("bad dimension {t:?}")))
        })
        .collect::<Result<_>>()?;
    if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::MalformedFile(format!(
            "dims must be at least two positive integers, got {layer_dims:?}"
        )));
    }

    let act_line = take_line(&mut rest)?;
    let act_str = act_line
        .strip_prefix("act: ")
        .ok_or_else(|| Error::MalformedFile("expected `act: ...` line".into()))?;
    let mut tags = act_str.split_whitespace();
    let hidden = HiddenActivation::from_tag(
        tags.next()
            .ok_or_else(|| Error::MalformedFile("missing hidden activation tag".into()))?,
    )?;
    let output = OutputActivation::from_tag(
        tags.next()
            .ok_or_else(|| Error::MalformedFile("missing output activation tag".into()))?,
    )?;
    if tags.next().is_some() {
        return Err(Error::MalformedFile("trailing tokens on act line".into()));
    }

    let bytes_line = take_line(&mut rest)?;
    let declared: usize = bytes_line
        .strip_prefix("bytes: ")
        .ok_or_else(|| Error::MalformedFile("expected `bytes: ...` line".into()))?
        .parse()
        .map_err(|_| Error::MalformedFile("bad byte count".into()))?;

    let mut param_count: usize = 0;
    for win in layer_dims.windows(2) {
        let layer = win[0]
            .checked_mul(win[1])
            .and_then(|n| n.checked_add(win[1]))
            .ok_or_else(|| Error::ShapeInconsistency("parameter count overflows".into()))?;
        param_count = param_count
            .checked_add(layer)
            .ok_or_else(|| Error::ShapeInconsistency("parameter count overflows".into()))?;
    }
    let expected = param_count
        .checked_mul(8)
        .ok_or_else(|| Error::ShapeInconsistency("payload size overflows".into()))?;
    if declared != expected {
        return Err(Error::ShapeInconsistency(format!(
            "dims {layer_dims:?} imply {expected} payload bytes but header declares {declared}"
        )));
    }
    if rest.len() < expected {
        return Err(Error::MalformedFile(format!(
            "truncated payload: expected {expected} bytes, found {}",
            rest.len()
        )));
    }
    if rest.len() > expected {
        return Err(Error::MalformedFile(format!(
            "trailing data: expected {expected} payload bytes, found {}",
            rest.len()
        )));
    }

    let mut cursor = rest;
    let mut next_f64 = || -> f64 {
        let (chunk, tail) = cursor.split_at(8);
        cursor = tail;
        f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"))
    };

    let mut weights = Vec::with_capacity(layer_dims.len() - 1);
    let mut biases = Vec::with_capacity(layer_dims.len() - 1);
    for win in layer_dims.windows(2) {
        let (fan_in, fan_out) = (win[0], win[1]);
        let mut w = Matrix::zeros(fan_out, fan_in);
        for v in w.as_mut_slice() {
            *v = next_f64();
        }
        let mut b = vec![0.0; fan_out];
        for v in &mut b {
            *v = next_f64();
        }
        if !w.is_finite() || b.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedFile("non-finite parameter value".into()));
        }
        weights.push(w);
        biases.push(b);
    }

    Ok(MlpModel::from_parts(layer_dims, weights, biases, hidden, output))
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    decode_model(&std::fs::read(path)?)
}

fn take_line<'a>(rest: &mut &'a [u8]) -> Result<&'a str> {
    let pos = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedFile("unterminated header line".into()))?;
    let (line, tail) = rest.split_at(pos);
    *rest = &tail[1..];
    std::str::from_utf8(line).map_err(|_| Error::MalformedFile("header is not UTF-8".into()))
}
