// SPDX-License-Identifier: MIT OR Apache-2.0

//! Stateless building blocks of cross-layer vision smoothing.
//!
//! With `λ_h` the visual slice of head `h`'s attention row at layer `l` and
//! `m` the vision memory:
//!
//! * initialization: `m[i] = max_h λ_h[i]` at layer 1,
//! * smoothing: `λ̂_h = β λ_h + (1 − β) m`,
//! * renormalization: `α̂[i] = α[i] / Σ_k α[k]` over the whole row,
//! * memory update: `m[i] ← γ m[i] + (1 − γ) max_h λ_h[i]`, from the raw
//!   (unsmoothed) `λ`,
//! * uncertainty: normalized entropy of the renormalized top-k probabilities.

use serde::{Deserialize, Serialize};

use crate::engine::TokenLayout;
use crate::error::{Error, Result};

/// Smoothed visual-attention mass carried across layers within one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionMemory {
    pub values: Vec<f64>,
    pub layer_of_last_update: usize,
}

impl VisionMemory {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Layer-1 position indices with every visual token sharing one index.
///
/// System tokens get `0..N_s`, all visual tokens get `N_s`, user tokens get
/// `N_s+1..=N_s+N_i`, and generated tokens continue from there. The largest
/// prompt index is therefore `N_s + N_i`.
pub fn unified_positions(layout: &TokenLayout) -> Vec<usize> {
    let mut out = Vec::with_capacity(layout.total_len());
    out.extend(0..layout.n_sys);
    out.extend(std::iter::repeat(layout.n_sys).take(layout.n_vis));
    let after = layout.n_sys + 1;
    out.extend(after..after + layout.n_usr + layout.generated_so_far);
    out
}

/// Elementwise maximum over heads.
pub fn head_max(heads: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = heads
        .first()
        .ok_or_else(|| Error::Config("need at least one attention head".into()))?;
    let mut out = first.clone();
    for (h, row) in heads.iter().enumerate().skip(1) {
        if row.len() != out.len() {
            return Err(Error::Input(format!(
                "head {h} has {} visual entries, head 0 has {}",
                row.len(),
                out.len()
            )));
        }
        for (o, &v) in out.iter_mut().zip(row) {
            if v > *o {
                *o = v;
            }
        }
    }
    Ok(out)
}

/// Memory at layer 1: head-wise max of the visual attention.
pub fn init_memory(layer1_visual: &[Vec<f64>]) -> Result<VisionMemory> {
    Ok(VisionMemory {
        values: head_max(layer1_visual)?,
        layer_of_last_update: 1,
    })
}

/// `β λ + (1 − β) m`, elementwise.
pub fn smooth(lambda: &[f64], memory: &VisionMemory, beta: f64) -> Result<Vec<f64>> {
    if lambda.len() != memory.len() {
        return Err(Error::Input(format!(
            "attention slice has {} entries, memory has {}",
            lambda.len(),
            memory.len()
        )));
    }
    Ok(lambda
        .iter()
        .zip(&memory.values)
        .map(|(&l, &m)| beta * l + (1.0 - beta) * m)
        .collect())
}

/// Divide a nonnegative row by its sum.
pub fn renormalize(row: &[f64]) -> Result<Vec<f64>> {
    if row.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvariantViolation(
            "attention row has a negative or non-finite entry".into(),
        ));
    }
    let sum: f64 = row.iter().sum();
    if sum <= 0.0 {
        return Err(Error::InvariantViolation(
            "cannot renormalize an all-zero attention row".into(),
        ));
    }
    Ok(row.iter().map(|x| x / sum).collect())
}

/// `γ m + (1 − γ) max_h λ_h`, elementwise.
pub fn update_memory(memory: &VisionMemory, current: &[Vec<f64>], gamma: f64, layer: usize) -> Result<VisionMemory> {
    let peak = head_max(current)?;
    if peak.len() != memory.len() {
        return Err(Error::Input(format!(
            "attention slice has {} entries, memory has {}",
            peak.len(),
            memory.len()
        )));
    }
    Ok(VisionMemory {
        values: memory
            .values
            .iter()
            .zip(&peak)
            .map(|(&m, &p)| gamma * m + (1.0 - gamma) * p)
            .collect(),
        layer_of_last_update: layer,
    })
}

/// Normalized entropy of the `topk` largest probabilities.
///
/// The selected probabilities are renormalized to sum to one before the
/// entropy is taken, and the result is divided by `ln(topk)`, so it lies in
/// `[0, 1]`. `topk = 1` yields 0.
pub fn uncertainty(probs: &[f64], topk: usize) -> Result<f64> {
    if topk == 0 {
        return Err(Error::Config("topk must be at least 1".into()));
    }
    if topk > probs.len() {
        return Err(Error::Input(format!(
            "topk {topk} exceeds vocabulary size {}",
            probs.len()
        )));
    }
    if topk == 1 {
        return Ok(0.0);
    }
    let mut sorted = probs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.truncate(topk);
    let mass: f64 = sorted.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::Input("top-k probabilities have no mass".into()));
    }
    let entropy: f64 = sorted
        .iter()
        .map(|&p| p / mass)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    if entropy <= 0.0 {
        return Ok(0.0);
    }
    Ok((entropy / (topk as f64).ln()).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mem(values: Vec<f64>) -> VisionMemory {
        VisionMemory {
            values,
            layer_of_last_update: 1,
        }
    }

    #[test]
    fn unified_positions_examples() {
        let l = TokenLayout::new(3, 4, 2).unwrap();
        assert_eq!(unified_positions(&l), vec![0, 1, 2, 3, 3, 3, 3, 4, 5]);
        let l = TokenLayout::new(0, 1, 0).unwrap();
        assert_eq!(unified_positions(&l), vec![0]);
        let l = TokenLayout::new(2, 3, 3).unwrap();
        let p = unified_positions(&l);
        assert_eq!(p, vec![0, 1, 2, 2, 2, 3, 4, 5]);
        assert_eq!(*p.iter().max().unwrap(), 2 + 3);
    }

    #[test]
    fn unified_positions_continue_through_generated_tokens() {
        let mut l = TokenLayout::new(1, 2, 1).unwrap();
        l.generated_so_far = 2;
        assert_eq!(unified_positions(&l), vec![0, 1, 1, 2, 3, 4]);
    }

    #[test]
    fn init_memory_examples() {
        let m = init_memory(&[vec![0.1, 0.4], vec![0.3, 0.2]]).unwrap();
        assert_eq!(m.values, vec![0.3, 0.4]);
        assert_eq!(init_memory(&[vec![0.2, 0.8]]).unwrap().values, vec![0.2, 0.8]);
        let v = vec![0.25, 0.5, 0.125];
        assert_eq!(init_memory(&[v.clone(), v.clone(), v.clone()]).unwrap().values, v);
        assert!(matches!(init_memory(&[]), Err(Error::Config(_))));
    }

    #[test]
    fn smooth_examples() {
        let s = smooth(&[0.5, 0.5], &mem(vec![1.0, 0.0]), 0.8).unwrap();
        assert!((s[0] - 0.6).abs() < 1e-15 && (s[1] - 0.4).abs() < 1e-15);
        let lambda = [0.3, 0.1, 0.05];
        let m = mem(vec![0.9, 0.0, 0.2]);
        assert_eq!(smooth(&lambda, &m, 1.0).unwrap(), lambda.to_vec());
        assert_eq!(smooth(&lambda, &m, 0.0).unwrap(), m.values);
        assert!(matches!(smooth(&[0.1], &m, 0.5), Err(Error::Input(_))));
    }

    #[test]
    fn renormalize_examples() {
        let r = renormalize(&[0.2, 0.2, 0.1]).unwrap();
        for (a, b) in r.iter().zip([0.4, 0.4, 0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
        let row = [0.25, 0.5, 0.125, 0.125];
        for (a, b) in renormalize(&row).unwrap().iter().zip(row) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(renormalize(&[0.3]).unwrap(), vec![1.0]);
        assert!(matches!(
            renormalize(&[0.0, 0.0]),
            Err(Error::InvariantViolation(_))
        ));
    }

    #[test]
    fn update_memory_examples() {
        let m = mem(vec![0.5, 0.1]);
        let cur = [vec![0.2, 0.9], vec![0.7, 0.0]];
        assert_eq!(update_memory(&m, &cur, 1.0, 2).unwrap().values, m.values);
        assert_eq!(update_memory(&m, &cur, 0.0, 2).unwrap().values, vec![0.7, 0.9]);
        let u = update_memory(&mem(vec![0.5]), &[vec![0.0]], 0.8, 2).unwrap();
        assert!((u.values[0] - 0.4).abs() < 1e-15);
        assert_eq!(u.layer_of_last_update, 2);
        assert!(matches!(
            update_memory(&m, &[vec![0.1]], 0.5, 2),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn uncertainty_examples() {
        let uniform = vec![0.05; 20];
        assert!((uncertainty(&uniform, 10).unwrap() - 1.0).abs() < 1e-12);
        let mut onehot = vec![0.0; 12];
        onehot[4] = 1.0;
        assert_eq!(uncertainty(&onehot, 10).unwrap().to_bits(), 0.0f64.to_bits());
        let mut two = vec![0.0; 12];
        two[1] = 0.5;
        two[7] = 0.5;
        let expected = std::f64::consts::LN_2 / 10f64.ln();
        assert!((uncertainty(&two, 10).unwrap() - expected).abs() < 1e-9);
        assert!((expected - std::f64::consts::LOG10_2).abs() < 1e-15);
        assert_eq!(uncertainty(&uniform, 1).unwrap(), 0.0);
        assert!(uncertainty(&uniform, 21).is_err());
    }

    proptest! {
        #[test]
        fn smooth_lies_between_inputs(
            pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..32),
            beta in 0.0f64..=1.0,
        ) {
            let (lambda, m): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let s = smooth(&lambda, &mem(m.clone()), beta).unwrap();
            for i in 0..s.len() {
                let lo = lambda[i].min(m[i]);
                let hi = lambda[i].max(m[i]);
                prop_assert!(s[i] >= lo - 1e-15 && s[i] <= hi + 1e-15);
            }
        }

        #[test]
        fn renormalized_rows_sum_to_one(row in prop::collection::vec(0.0f64..1.0, 1..64)) {
            prop_assume!(row.iter().sum::<f64>() > 1e-9);
            let r = renormalize(&row).unwrap();
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn uncertainty_is_bounded(logits in prop::collection::vec(-10.0f64..10.0, 10..50), k in 1usize..10) {
            let p = crate::engine::softmax(&logits);
            let u = uncertainty(&p, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&u));
        }
    }
}
