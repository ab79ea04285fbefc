// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::scene::ObjectOverlap;
use crate::error::{Error, Result};
use crate::trace::TraceRecord;

/// Key-object attention at each layer, `a_obj^(l)` for `l = 1..=L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSeries(pub Vec<f64>);

impl AttentionSeries {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Layer `l` (1-based).
    pub fn at(&self, layer: usize) -> f64 {
        self.0[layer - 1]
    }
}

/// Per-layer argmax tokens of one step and where they settle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceProfile {
    pub layer_tokens: Vec<usize>,
    pub final_token: usize,
    /// Smallest layer from which every layer's argmax is the final token.
    pub convergence_layer: usize,
}

impl ConvergenceProfile {
    pub fn converged_at(&self, layer: usize) -> bool {
        layer >= self.convergence_layer
    }
}

/// `Σ_i a[i] · overlap[i]`: attention mass landing on an object.
pub fn key_object_attention(avg_attention: &[f64], overlap: &ObjectOverlap) -> Result<f64> {
    if avg_attention.len() != overlap.overlap.len() {
        return Err(Error::Input(format!(
            "{} attention entries but object {:?} covers {} patches",
            avg_attention.len(),
            overlap.name,
            overlap.overlap.len()
        )));
    }
    Ok(avg_attention
        .iter()
        .zip(&overlap.overlap)
        .map(|(a, o)| a * o)
        .sum())
}

/// 1-based layer of the largest value; ties go to the lowest layer.
pub fn peak_layer(series: &AttentionSeries) -> Result<usize> {
    if series.is_empty() {
        return Err(Error::Input("empty attention series".into()));
    }
    Ok(crate::engine::math::argmax(&series.0) + 1)
}

/// Per-layer `100 · (clvs − vanilla) / vanilla`, clipped above at `clip_pct`.
///
/// A zero vanilla entry maps to `clip_pct` when the smoothed value is
/// positive and to 0 otherwise.
pub fn relative_increase(clvs: &AttentionSeries, vanilla: &AttentionSeries, clip_pct: f64) -> Result<Vec<f64>> {
    if clvs.len() != vanilla.len() {
        return Err(Error::Input(format!(
            "series lengths differ: {} vs {}",
            clvs.len(),
            vanilla.len()
        )));
    }
    if !(clip_pct > 0.0) {
        return Err(Error::Input(format!("clip must be positive, got {clip_pct}")));
    }
    Ok(clvs
        .0
        .iter()
        .zip(&vanilla.0)
        .map(|(&c, &v)| {
            if c == v {
                0.0
            } else if v == 0.0 {
                if c > 0.0 {
                    clip_pct
                } else {
                    0.0
                }
            } else {
                (100.0 * (c - v) / v).min(clip_pct)
            }
        })
        .collect())
}

/// Convergence profile of one step's records (in layer order).
pub fn convergence_layer(records: &[TraceRecord]) -> Result<ConvergenceProfile> {
    let last = records
        .last()
        .ok_or_else(|| Error::Input("no records for step".into()))?;
    let layer_tokens: Vec<usize> = records.iter().map(|r| r.layer_argmax_token).collect();
    let final_token = last.layer_argmax_token;
    let agreeing_suffix = layer_tokens
        .iter()
        .rev()
        .take_while(|&&t| t == final_token)
        .count();
    Ok(ConvergenceProfile {
        convergence_layer: layer_tokens.len() - agreeing_suffix + 1,
        layer_tokens,
        final_token,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obj(overlap: Vec<f64>) -> ObjectOverlap {
        ObjectOverlap {
            name: "obj".into(),
            overlap,
        }
    }

    fn rec(layer: usize, tok: usize) -> TraceRecord {
        TraceRecord {
            step: 0,
            layer,
            pre_visual_attention: vec![],
            post_visual_attention: vec![],
            memory: vec![],
            uncertainty: None,
            terminated: false,
            layer_argmax_token: tok,
        }
    }

    #[test]
    fn key_object_attention_examples() {
        let a = [0.1, 0.2, 0.7];
        let v = key_object_attention(&a, &obj(vec![1.0, 0.5, 0.0])).unwrap();
        assert!((v - 0.2).abs() < 1e-15);
        assert_eq!(key_object_attention(&a, &obj(vec![0.0; 3])).unwrap(), 0.0);
        let all = key_object_attention(&a, &obj(vec![1.0; 3])).unwrap();
        assert!((all - 1.0).abs() < 1e-15);
        assert!(key_object_attention(&a, &obj(vec![1.0])).is_err());
    }

    #[test]
    fn peak_layer_examples() {
        assert_eq!(peak_layer(&AttentionSeries(vec![0.1, 0.5, 0.2])).unwrap(), 2);
        assert_eq!(peak_layer(&AttentionSeries(vec![0.3; 4])).unwrap(), 1);
        assert_eq!(peak_layer(&AttentionSeries(vec![0.0, 0.0, 0.3])).unwrap(), 3);
    }

    #[test]
    fn relative_increase_examples() {
        let r = relative_increase(&AttentionSeries(vec![0.2]), &AttentionSeries(vec![0.1]), 100.0).unwrap();
        assert_eq!(r, vec![100.0]);
        let s = AttentionSeries(vec![0.1, 0.0, 0.4]);
        assert_eq!(relative_increase(&s, &s, 100.0).unwrap(), vec![0.0; 3]);
        let r = relative_increase(&AttentionSeries(vec![0.12]), &AttentionSeries(vec![0.10]), 100.0).unwrap();
        assert!((r[0] - 20.0).abs() < 1e-9);
        let r = relative_increase(&AttentionSeries(vec![0.3, 0.0]), &AttentionSeries(vec![0.0, 0.0]), 100.0).unwrap();
        assert_eq!(r, vec![100.0, 0.0]);
    }

    #[test]
    fn convergence_examples() {
        let all: Vec<_> = (1..=4).map(|l| rec(l, 7)).collect();
        assert_eq!(convergence_layer(&all).unwrap().convergence_layer, 1);
        let late = vec![rec(1, 1), rec(2, 2), rec(3, 3), rec(4, 9)];
        assert_eq!(convergence_layer(&late).unwrap().convergence_layer, 4);
        let mid = vec![rec(1, 0), rec(2, 5), rec(3, 5), rec(4, 5)];
        let p = convergence_layer(&mid).unwrap();
        assert_eq!(p.convergence_layer, 2);
        assert_eq!(p.final_token, 5);
        // A token that appears early, disappears and returns does not count.
        let bounce = vec![rec(1, 5), rec(2, 4), rec(3, 5), rec(4, 5)];
        assert_eq!(convergence_layer(&bounce).unwrap().convergence_layer, 3);
    }

    proptest! {
        #[test]
        fn key_object_attention_is_linear(
            a in prop::collection::vec(0.0f64..1.0, 6),
            b in prop::collection::vec(0.0f64..1.0, 6),
            o in prop::collection::vec(0.0f64..=1.0, 6),
            s in 0.0f64..3.0,
        ) {
            let ov = obj(o);
            let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| s * x + y).collect();
            let lhs = key_object_attention(&combo, &ov).unwrap();
            let rhs = s * key_object_attention(&a, &ov).unwrap() + key_object_attention(&b, &ov).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn key_object_attention_is_monotone_in_overlap(
            a in prop::collection::vec(0.0f64..1.0, 6),
            o in prop::collection::vec(0.0f64..=1.0, 6),
            bump in prop::collection::vec(0.0f64..=1.0, 6),
        ) {
            let bigger: Vec<f64> = o.iter().zip(&bump).map(|(x, d)| (x + d).min(1.0)).collect();
            prop_assert!(key_object_attention(&a, &obj(bigger)).unwrap() >= key_object_attention(&a, &obj(o)).unwrap() - 1e-15);
        }

        #[test]
        fn relative_increase_respects_the_clip(
            pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..20),
            clip in 1.0f64..500.0,
        ) {
            let (c, v): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let r = relative_increase(&AttentionSeries(c), &AttentionSeries(v), clip).unwrap();
            prop_assert!(r.iter().all(|&x| x <= clip));
        }
    }
}
