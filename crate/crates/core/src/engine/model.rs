// SPDX-License-Identifier: MIT OR Apache-2.0

//! Single-token forward pass with a KV cache.

use std::ops::Range;

use super::cache::KvCache;
use super::config::ModelConfig;
use super::hook::{AttentionHook, AttentionSnapshot};
use super::math::{attention_row, gelu, matvec, rms_norm, softmax};
use super::rope::rotate_head;
use super::weights::ModelWeights;
use crate::error::{Error, Result};

/// Tolerance on the sum of an attention row.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Position indices of one token: layer 1 may use a different index than
/// the remaining layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenPosition {
    pub first_layer: usize,
    pub other_layers: usize,
}

impl TokenPosition {
    /// The same index at every layer.
    pub fn uniform(position: usize) -> Self {
        Self {
            first_layer: position,
            other_layers: position,
        }
    }

    pub fn for_layer(&self, layer_idx: usize) -> usize {
        if layer_idx == 0 {
            self.first_layer
        } else {
            self.other_layers
        }
    }
}

/// Everything one forward step produces.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Vec<f64>,
    /// Residual stream after each block, `L` entries.
    pub hidden_states: Vec<Vec<f64>>,
    /// Attention as computed (after scripted injection, before the hook).
    pub pre_attention: Vec<AttentionSnapshot>,
    /// Attention actually used for value mixing.
    pub post_attention: Vec<AttentionSnapshot>,
    pub termination_layer: Option<usize>,
}

impl StepOutput {
    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

/// A validated model ready for inference.
#[derive(Debug, Clone)]
pub struct Model {
    weights: ModelWeights,
}

impl Model {
    pub fn new(weights: ModelWeights) -> Result<Self> {
        weights.validate()?;
        Ok(Self { weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.weights.config
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache::new(self.config().n_layers)
    }

    /// Logits of the final normalization + unembedding applied to `hidden`.
    pub fn layer_logits(&self, hidden: &[f64]) -> Result<Vec<f64>> {
        let cfg = self.config();
        if hidden.len() != cfg.hidden {
            return Err(Error::Input(format!(
                "hidden state has length {}, model width is {}",
                hidden.len(),
                cfg.hidden
            )));
        }
        let normed = rms_norm(hidden, &self.weights.final_norm);
        Ok(matvec(&self.weights.unembed, cfg.vocab, cfg.hidden, &normed))
    }

    /// Logit-lens distribution of an intermediate (or final) hidden state.
    pub fn layer_probe(&self, hidden: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.layer_logits(hidden)?))
    }

    /// Process one token, append its keys/values to `cache`, and return the
    /// next-token logits.
    ///
    /// `visual` names the context positions that hold visual tokens; it is
    /// passed through to the hook's snapshots. A hooked step needs the whole
    /// span inside its context; unhooked prefill steps see it truncated.
    pub fn forward_step(
        &self,
        cache: &mut KvCache,
        token_id: usize,
        position: TokenPosition,
        visual: Range<usize>,
        mut hook: Option<&mut dyn AttentionHook>,
    ) -> Result<StepOutput> {
        let cfg = self.config();
        if token_id >= cfg.vocab {
            return Err(Error::Input(format!(
                "token id {token_id} outside vocabulary of size {}",
                cfg.vocab
            )));
        }
        if cache.n_layers() != cfg.n_layers {
            return Err(Error::Input(format!(
                "cache has {} layers, model has {}",
                cache.n_layers(),
                cfg.n_layers
            )));
        }
        let d = cfg.hidden;
        let hd = cfg.head_dim;
        let scale = cfg.score_scale();

        let mut x = self.weights.embed[token_id * d..(token_id + 1) * d].to_vec();
        let mut hidden_states = Vec::with_capacity(cfg.n_layers);
        let mut pre_attention = Vec::with_capacity(cfg.n_layers);
        let mut post_attention = Vec::with_capacity(cfg.n_layers);

        for (li, lw) in self.weights.layers.iter().enumerate() {
            let layer = li + 1;
            let h = rms_norm(&x, &lw.attn_norm);
            let mut q = matvec(&lw.wq, d, d, &h);
            let mut k = matvec(&lw.wk, d, d, &h);
            let v = matvec(&lw.wv, d, d, &h);
            let pos = position.for_layer(li);
            for head in 0..cfg.n_heads {
                rotate_head(&mut q[head * hd..(head + 1) * hd], pos, cfg.rope_base)?;
                rotate_head(&mut k[head * hd..(head + 1) * hd], pos, cfg.rope_base)?;
            }
            cache.push(li, k, v);
            let ctx = cache.layer_len(li);
            if hook.is_some() && visual.end > ctx {
                return Err(Error::Input(format!(
                    "visual span {visual:?} extends past context length {ctx}"
                )));
            }
            let visual = visual.start.min(ctx)..visual.end.min(ctx);

            let mut rows = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let span = head * hd..(head + 1) * hd;
                let keys: Vec<&[f64]> = cache.keys(li).iter().map(|k| &k[span.clone()]).collect();
                rows.push(attention_row(&q[span], &keys, scale)?);
            }
            if let Some(hk) = hook.as_deref_mut() {
                hk.inject(layer, &visual, &mut rows)?;
            }
            check_rows(layer, &rows, ctx, "pre-intervention")?;
            let pre = AttentionSnapshot {
                layer,
                rows,
                visual: visual.clone(),
            };
            let post_rows = match hook.as_deref_mut() {
                Some(hk) => {
                    let mut rows = pre.rows.clone();
                    hk.on_attention(&pre, &mut rows)?;
                    check_rows(layer, &rows, ctx, "post-intervention")?;
                    rows
                }
                None => pre.rows.clone(),
            };

            let mut mixed = vec![0.0; d];
            for (head, row) in post_rows.iter().enumerate() {
                let span = head * hd..(head + 1) * hd;
                let out = &mut mixed[span.clone()];
                for (w, val) in row.iter().zip(cache.values(li)) {
                    for (o, vv) in out.iter_mut().zip(&val[span.clone()]) {
                        *o += w * vv;
                    }
                }
            }
            let attn_out = matvec(&lw.wo, d, d, &mixed);
            x.iter_mut().zip(&attn_out).for_each(|(a, b)| *a += b);

            let h2 = rms_norm(&x, &lw.ffn_norm);
            let up: Vec<f64> = matvec(&lw.w_up, cfg.ffn_dim, d, &h2)
                .into_iter()
                .map(gelu)
                .collect();
            let down = matvec(&lw.w_down, d, cfg.ffn_dim, &up);
            x.iter_mut().zip(&down).for_each(|(a, b)| *a += b);

            if let Some(hk) = hook.as_deref_mut() {
                hk.on_layer_output(layer, &x, self)?;
            }
            hidden_states.push(x.clone());
            post_attention.push(AttentionSnapshot {
                layer,
                rows: post_rows,
                visual: visual.clone(),
            });
            pre_attention.push(pre);
        }

        let logits = self.layer_logits(&x)?;
        let termination_layer = hook.as_deref().and_then(|h| h.termination_layer());
        Ok(StepOutput {
            logits,
            hidden_states,
            pre_attention,
            post_attention,
            termination_layer,
        })
    }
}

fn check_rows(layer: usize, rows: &[Vec<f64>], ctx: usize, what: &str) -> Result<()> {
    for (h, row) in rows.iter().enumerate() {
        if row.len() != ctx {
            return Err(Error::InvariantViolation(format!(
                "layer {layer} head {h}: {what} row has length {}, context is {ctx}",
                row.len()
            )));
        }
        if row.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvariantViolation(format!(
                "layer {layer} head {h}: {what} row has a negative or non-finite entry"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::InvariantViolation(format!(
                "layer {layer} head {h}: {what} row sums to {sum}"
            )));
        }
    }
    Ok(())
}
