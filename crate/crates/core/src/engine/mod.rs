// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic decoder-only transformer.
//!
//! Pre-norm blocks (RMS normalization, rotary multi-head attention, GELU
//! feed-forward), no biases, `f64` throughout. Position indices are explicit
//! per token and may differ between layer 1 and the rest, and every layer
//! exposes the generating token's attention row to an [`AttentionHook`].

pub mod cache;
pub mod config;
pub mod generate;
pub mod hook;
pub mod layout;
pub mod math;
pub mod model;
pub mod rope;
pub mod weights;

pub use cache::KvCache;
pub use config::{AttentionScale, ModelConfig};
pub use generate::{generate, Generation};
pub use hook::{AttentionHook, AttentionSnapshot, IdentityHook};
pub use layout::TokenLayout;
pub use math::{attention_row, softmax};
pub use model::{Model, StepOutput, TokenPosition};
pub use rope::rope_positions;
pub use weights::{LayerWeights, ModelWeights};

#[cfg(test)]
mod tests {
    use super::math::{argmax, matvec, rms_norm};
    use super::*;
    use crate::error::Error;
    use crate::harness::synth::{gen_weights, GenDims};

    fn tiny(seed: u64) -> Model {
        let dims = GenDims {
            n_layers: 3,
            n_heads: 2,
            head_dim: 4,
            vocab: 16,
            ..GenDims::default()
        };
        Model::new(gen_weights(seed, &dims).unwrap()).unwrap()
    }

    #[test]
    fn residual_only_model_unembeds_the_embedding() {
        let cfg = tiny(0).config().clone();
        let mut w = ModelWeights::zeros(cfg.clone()).unwrap();
        for (i, e) in w.embed.iter_mut().enumerate() {
            *e = ((i * 7 % 11) as f64 - 5.0) / 3.0;
        }
        for (i, u) in w.unembed.iter_mut().enumerate() {
            *u = ((i * 5 % 13) as f64 - 6.0) / 4.0;
        }
        let model = Model::new(w.clone()).unwrap();
        let mut cache = model.new_cache();
        let token = 3;
        let out = model
            .forward_step(&mut cache, token, TokenPosition::uniform(0), 0..1, None)
            .unwrap();
        let d = cfg.hidden;
        let e = &w.embed[token * d..(token + 1) * d];
        let expected = matvec(&w.unembed, cfg.vocab, d, &rms_norm(e, &w.final_norm));
        assert_eq!(out.logits, expected);
    }

    #[test]
    fn identity_hook_is_bit_identical() {
        let model = tiny(11);
        let layout = TokenLayout::new(1, 3, 2).unwrap();
        let prompt = [1, 2, 3, 4, 5, 6];
        let pos = layout.original_positions();
        let plain = generate(&model, &prompt, &layout, &pos, 5, None).unwrap();
        let mut id = IdentityHook;
        let hooked = generate(&model, &prompt, &layout, &pos, 5, Some(&mut id)).unwrap();
        assert_eq!(plain.tokens, hooked.tokens);
        for (a, b) in plain.steps.iter().zip(&hooked.steps) {
            assert_eq!(a.logits, b.logits);
            assert_eq!(a.post_attention, b.post_attention);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let layout = TokenLayout::new(2, 4, 1).unwrap();
        let prompt = [0, 9, 8, 7, 6, 5, 4];
        let pos = layout.original_positions();
        let a = generate(&tiny(5), &prompt, &layout, &pos, 6, None).unwrap();
        let b = generate(&tiny(5), &prompt, &layout, &pos, 6, None).unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.tokens.len(), 6);
        assert_eq!(a.steps.len(), 6);
    }

    #[test]
    fn max_new_zero_records_prefill_only() {
        let layout = TokenLayout::new(0, 2, 1).unwrap();
        let g = generate(&tiny(2), &[1, 2, 3], &layout, &[0, 1, 2], 0, None).unwrap();
        assert!(g.tokens.is_empty());
        assert_eq!(g.steps.len(), 1);
        assert_eq!(g.steps[0].pre_attention.len(), 3);
    }

    #[test]
    fn snapshots_are_causal_and_normalized() {
        let layout = TokenLayout::new(1, 3, 1).unwrap();
        let prompt = [1, 2, 3, 4, 5];
        let g = generate(&tiny(3), &prompt, &layout, &layout.original_positions(), 4, None).unwrap();
        for (t, step) in g.steps.iter().enumerate() {
            for snap in &step.pre_attention {
                assert_eq!(snap.context_len(), prompt.len() + t);
                for row in &snap.rows {
                    assert!(row.iter().all(|&a| a >= 0.0));
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn final_layer_probe_matches_output_distribution() {
        let model = tiny(4);
        let mut cache = model.new_cache();
        let out = model
            .forward_step(&mut cache, 7, TokenPosition::uniform(0), 0..1, None)
            .unwrap();
        let probe = model.layer_probe(out.hidden_states.last().unwrap()).unwrap();
        for (a, b) in probe.iter().zip(out.probabilities()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_hidden_probes_uniform() {
        let model = tiny(4);
        let probs = model.layer_probe(&vec![0.0; model.config().hidden]).unwrap();
        let v = model.config().vocab as f64;
        assert!(probs.iter().all(|p| (p - 1.0 / v).abs() < 1e-15));
    }

    #[test]
    fn dominant_unembedding_direction_wins_the_probe() {
        let cfg = tiny(0).config().clone();
        let mut w = ModelWeights::zeros(cfg.clone()).unwrap();
        let target = 6;
        // Row `target` aligned with the all-ones direction, all others orthogonal-ish and small.
        for tok in 0..cfg.vocab {
            for j in 0..cfg.hidden {
                w.unembed[tok * cfg.hidden + j] = if tok == target { 2.0 } else { 0.1 * (j as f64 % 2.0) };
            }
        }
        let model = Model::new(w).unwrap();
        let probs = model.layer_probe(&vec![1.0; cfg.hidden]).unwrap();
        assert_eq!(argmax(&probs), target);
        // Oracle softmax by hand over the same logits.
        let logits = model.layer_logits(&vec![1.0; cfg.hidden]).unwrap();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        assert!((probs[target] - logits[target].exp() / z).abs() < 1e-12);
    }

    #[test]
    fn out_of_vocab_token_is_input_error() {
        let model = tiny(1);
        let mut cache = model.new_cache();
        let err = model
            .forward_step(&mut cache, 16, TokenPosition::uniform(0), 0..1, None)
            .unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn cache_grows_by_one_per_layer() {
        let model = tiny(1);
        let mut cache = model.new_cache();
        for i in 0..3 {
            model
                .forward_step(&mut cache, i, TokenPosition::uniform(i), 0..1, None)
                .unwrap();
            for l in 0..model.config().n_layers {
                assert_eq!(cache.layer_len(l), i + 1);
            }
        }
    }
}
