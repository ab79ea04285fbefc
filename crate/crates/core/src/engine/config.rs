// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which width the attention logits are scaled by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// `1/sqrt(head_dim)`, the usual per-head convention.
    #[default]
    PerHead,
    /// `1/sqrt(hidden)`, scaling by the full model width.
    Hidden,
}

/// Shape and hyperparameters of a decoder-only model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub hidden: usize,
    pub vocab: usize,
    /// Feed-forward inner width.
    pub ffn_dim: usize,
    pub rope_base: f64,
    pub seed: u64,
    #[serde(default)]
    pub attention_scale: AttentionScale,
}

impl ModelConfig {
    /// Minimum vocabulary so that a top-10 uncertainty is always defined.
    pub const MIN_VOCAB: usize = 10;

    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 2 {
            return Err(Error::Config(format!(
                "n_layers must be >= 2, got {}",
                self.n_layers
            )));
        }
        if self.n_heads < 1 {
            return Err(Error::Config("n_heads must be >= 1".into()));
        }
        if self.head_dim == 0 || self.head_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "head_dim must be positive and even for rotary encoding, got {}",
                self.head_dim
            )));
        }
        if self.hidden != self.n_heads * self.head_dim {
            return Err(Error::Config(format!(
                "hidden ({}) must equal n_heads * head_dim ({} * {})",
                self.hidden, self.n_heads, self.head_dim
            )));
        }
        if self.vocab < Self::MIN_VOCAB {
            return Err(Error::Config(format!(
                "vocab must be >= {}, got {}",
                Self::MIN_VOCAB,
                self.vocab
            )));
        }
        if self.ffn_dim == 0 {
            return Err(Error::Config("ffn_dim must be positive".into()));
        }
        if !(self.rope_base.is_finite() && self.rope_base > 0.0) {
            return Err(Error::Config(format!(
                "rope_base must be a positive finite number, got {}",
                self.rope_base
            )));
        }
        Ok(())
    }

    /// Multiplier applied to query-key dot products.
    pub fn score_scale(&self) -> f64 {
        match self.attention_scale {
            AttentionScale::PerHead => 1.0 / (self.head_dim as f64).sqrt(),
            AttentionScale::Hidden => 1.0 / (self.hidden as f64).sqrt(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ModelConfig {
        ModelConfig {
            n_layers: 4,
            n_heads: 2,
            head_dim: 4,
            hidden: 8,
            vocab: 32,
            ffn_dim: 32,
            rope_base: 10_000.0,
            seed: 1,
            attention_scale: AttentionScale::PerHead,
        }
    }

    #[test]
    fn valid_config_passes() {
        base().validate().unwrap();
    }

    #[test]
    fn rejects_hidden_mismatch() {
        let cfg = ModelConfig {
            hidden: 9,
            ..base()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_odd_head_dim() {
        let cfg = ModelConfig {
            head_dim: 3,
            hidden: 6,
            ..base()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_single_layer_and_small_vocab() {
        let cfg = ModelConfig {
            n_layers: 1,
            ..base()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { vocab: 9, ..base() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn scale_modes() {
        let mut cfg = base();
        assert!((cfg.score_scale() - 0.5).abs() < 1e-15);
        cfg.attention_scale = AttentionScale::Hidden;
        assert!((cfg.score_scale() - 1.0 / 8f64.sqrt()).abs() < 1e-15);
    }
}
