// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded synthetic models, prompts and scenes.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(seed)`. A uniform draw in `[0, 1)` is
//! `(next_u64() >> 11) * 2^-53`, using only the generator's raw 64-bit
//! output, so the values are identical on every platform.
//!
//! Weights are drawn in file order (`embed`, then per layer `wq`, `wk`,
//! `wv`, `wo`, `w_up`, `w_down`, then `unembed`) as
//! `(2u − 1) · sqrt(3 / fan_in)`, i.e. uniform with variance `1/fan_in`.
//! Embeddings use `fan_in = 1`. Normalization gains are 1 except the final
//! gain, which is `logit_gain` and controls how peaked the output
//! distributions are.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{box_overlap, PatchGrid, Scene, SceneObject};
use crate::engine::{AttentionScale, ModelConfig, ModelWeights};
use crate::error::{Error, Result};

/// Deterministic source of uniform draws.
pub struct Uniform(ChaCha8Rng);

impl Uniform {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n` (by scaling; `n` is small here).
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }
}

/// Dimensions of a generated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDims {
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub vocab: usize,
    /// Feed-forward width; 0 means `4 * hidden`.
    #[serde(default)]
    pub ffn_dim: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default = "default_logit_gain")]
    pub logit_gain: f64,
    #[serde(default)]
    pub attention_scale: AttentionScale,
}

fn default_rope_base() -> f64 {
    10_000.0
}

fn default_logit_gain() -> f64 {
    1.0
}

impl Default for GenDims {
    fn default() -> Self {
        Self {
            n_layers: 4,
            n_heads: 2,
            head_dim: 4,
            vocab: 32,
            ffn_dim: 0,
            rope_base: default_rope_base(),
            logit_gain: default_logit_gain(),
            attention_scale: AttentionScale::PerHead,
        }
    }
}

impl GenDims {
    pub fn model_config(&self, seed: u64) -> ModelConfig {
        let hidden = self.n_heads * self.head_dim;
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            head_dim: self.head_dim,
            hidden,
            vocab: self.vocab,
            ffn_dim: if self.ffn_dim == 0 { 4 * hidden } else { self.ffn_dim },
            rope_base: self.rope_base,
            seed,
            attention_scale: self.attention_scale,
        }
    }
}

fn fill(rng: &mut Uniform, out: &mut [f64], fan_in: usize) {
    let bound = (3.0 / fan_in as f64).sqrt();
    out.iter_mut().for_each(|w| *w = bound * (2.0 * rng.next_f64() - 1.0));
}

/// Seeded random weights for `dims`.
pub fn gen_weights(seed: u64, dims: &GenDims) -> Result<ModelWeights> {
    if !(dims.logit_gain.is_finite() && dims.logit_gain > 0.0) {
        return Err(Error::Config(format!(
            "logit_gain must be positive, got {}",
            dims.logit_gain
        )));
    }
    let config = dims.model_config(seed);
    let mut w = ModelWeights::zeros(config)?;
    let d = w.config.hidden;
    let f = w.config.ffn_dim;
    let mut rng = Uniform::new(seed);
    fill(&mut rng, &mut w.embed, 1);
    for layer in &mut w.layers {
        fill(&mut rng, &mut layer.wq, d);
        fill(&mut rng, &mut layer.wk, d);
        fill(&mut rng, &mut layer.wv, d);
        fill(&mut rng, &mut layer.wo, d);
        fill(&mut rng, &mut layer.w_up, d);
        fill(&mut rng, &mut layer.w_down, f);
    }
    fill(&mut rng, &mut w.unembed, d);
    w.final_norm.iter_mut().for_each(|g| *g = dims.logit_gain);
    Ok(w)
}

/// Canonical model-file bytes for `(seed, dims)`.
pub fn gen_model(seed: u64, dims: &GenDims) -> Result<Vec<u8>> {
    gen_weights(seed, dims)?.to_json_bytes()
}

/// `len` token ids drawn uniformly from the vocabulary.
pub fn gen_prompt(seed: u64, vocab: usize, len: usize) -> Vec<usize> {
    let mut rng = Uniform::new(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..len).map(|_| rng.below(vocab)).collect()
}

/// A grid with `n_objects` random axis-aligned boxes named `object_0`, ...
pub fn gen_scene(seed: u64, grid: PatchGrid, n_objects: usize) -> Result<Scene> {
    if grid.n_patches() == 0 {
        return Err(Error::Config("scene grid must have at least one patch".into()));
    }
    let mut rng = Uniform::new(seed);
    let objects = (0..n_objects)
        .map(|i| {
            let w = rng.range(0.15, 0.5);
            let h = rng.range(0.15, 0.5);
            let x0 = rng.range(0.0, 1.0 - w);
            let y0 = rng.range(0.0, 1.0 - h);
            let bbox = [x0, y0, x0 + w, y0 + h];
            SceneObject {
                name: format!("object_{i}"),
                overlap: box_overlap(grid, bbox),
                bbox: Some(bbox),
            }
        })
        .collect();
    let scene = Scene { grid, objects };
    scene.validate()?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let dims = GenDims::default();
        assert_eq!(gen_model(3, &dims).unwrap(), gen_model(3, &dims).unwrap());
    }

    #[test]
    fn different_seeds_differ() {
        let dims = GenDims::default();
        let a = gen_weights(1, &dims).unwrap().checksum().unwrap();
        let b = gen_weights(2, &dims).unwrap().checksum().unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn inconsistent_dims_are_config_errors() {
        let dims = GenDims {
            head_dim: 3,
            ..GenDims::default()
        };
        assert!(matches!(gen_weights(0, &dims), Err(Error::Config(_))));
        let mut cfg = GenDims::default().model_config(0);
        cfg.hidden += 1;
        assert!(matches!(ModelWeights::zeros(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn uniform_draws_are_in_range() {
        let mut u = Uniform::new(9);
        for _ in 0..1000 {
            let x = u.next_f64();
            assert!((0.0..1.0).contains(&x));
            assert!(u.below(7) < 7);
        }
    }

    #[test]
    fn weights_have_fan_in_variance() {
        let dims = GenDims {
            n_heads: 4,
            head_dim: 8,
            ..GenDims::default()
        };
        let w = gen_weights(5, &dims).unwrap();
        let d = w.config.hidden as f64;
        let vals = &w.layers[0].wq;
        let var = vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64;
        assert!((var * d - 1.0).abs() < 0.15, "var*d = {}", var * d);
    }

    #[test]
    fn scenes_are_deterministic_and_valid() {
        let grid = PatchGrid { rows: 3, cols: 3 };
        let a = gen_scene(4, grid, 2).unwrap();
        assert_eq!(a, gen_scene(4, grid, 2).unwrap());
        assert_eq!(a.objects.len(), 2);
        assert!(a.objects[0].overlap.iter().any(|&o| o > 0.0));
    }
}
