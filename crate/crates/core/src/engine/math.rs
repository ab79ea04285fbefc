// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense f64 kernels used by the forward pass.

use crate::error::{Error, Result};

/// Epsilon inside the RMS normalization.
pub const RMS_EPS: f64 = 1e-6;

/// Numerically stable softmax over `logits`.
///
/// The maximum is subtracted before exponentiation, so inputs such as
/// `[1000.0, 0.0]` do not overflow.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    if logits.is_empty() {
        return Vec::new();
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Attention weights of one query over a set of keys.
///
/// `keys` holds one key vector per context position. Returns
/// `softmax(scale * q . k_j)` over positions `j`.
pub fn attention_row(query: &[f64], keys: &[&[f64]], scale: f64) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(keys.len());
    for (j, key) in keys.iter().enumerate() {
        if key.len() != query.len() {
            return Err(Error::Config(format!(
                "key {j} has dimension {}, query has {}",
                key.len(),
                query.len()
            )));
        }
        scores.push(scale * dot(query, key));
    }
    Ok(softmax(&scores))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = W x` for a row-major `rows x cols` matrix.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    w.chunks_exact(cols).map(|row| dot(row, x)).collect()
}

/// RMS normalization with a per-channel gain and no bias.
pub fn rms_norm(x: &[f64], gain: &[f64]) -> Vec<f64> {
    let mean_sq = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (mean_sq + RMS_EPS).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * inv * g).collect()
}

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)).tanh())
}

/// Index of the maximum entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
