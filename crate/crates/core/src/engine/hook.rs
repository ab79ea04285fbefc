// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attention intervention points.
//!
//! For every layer of a forward step the engine
//!
//! 1. computes the generating token's per-head attention rows,
//! 2. lets [`AttentionHook::inject`] overwrite them (scripted attention),
//! 3. records them as the pre-intervention [`AttentionSnapshot`],
//! 4. hands a mutable copy to [`AttentionHook::on_attention`],
//! 5. mixes values with the resulting rows and runs the feed-forward, then
//! 6. reports the block output to [`AttentionHook::on_layer_output`].

use std::ops::Range;

use super::model::Model;
use crate::error::Result;

/// Attention rows of the generating token at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSnapshot {
    /// 1-based layer index.
    pub layer: usize,
    /// One row per head, each over the current context (length = context_len).
    pub rows: Vec<Vec<f64>>,
    /// Context positions holding visual tokens.
    pub visual: Range<usize>,
}

impl AttentionSnapshot {
    pub fn n_heads(&self) -> usize {
        self.rows.len()
    }

    pub fn context_len(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// `H x N_v` visual slices.
    pub fn visual_slices(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| r[self.visual.clone()].to_vec())
            .collect()
    }

    /// Head-mean attention per visual token.
    pub fn visual_head_mean(&self) -> Vec<f64> {
        let n_v = self.visual.len();
        let mut mean = vec![0.0; n_v];
        for row in &self.rows {
            for (m, a) in mean.iter_mut().zip(&row[self.visual.clone()]) {
                *m += a;
            }
        }
        let h = self.rows.len() as f64;
        mean.iter_mut().for_each(|m| *m /= h);
        mean
    }
}

/// Hook invoked on the generating token's attention at every layer.
///
/// Methods are called in layer order `1..=L` within one step. Implementations
/// must leave each row nonnegative with a positive sum that renormalizes to 1.
pub trait AttentionHook {
    /// Replace computed attention before it is recorded. Default: keep it.
    fn inject(&mut self, _layer: usize, _visual: &Range<usize>, _rows: &mut [Vec<f64>]) -> Result<()> {
        Ok(())
    }

    /// Modify `rows`, which start as a copy of `pre.rows`.
    fn on_attention(&mut self, pre: &AttentionSnapshot, rows: &mut [Vec<f64>]) -> Result<()>;

    /// Observe the block output of `layer`.
    fn on_layer_output(&mut self, _layer: usize, _hidden: &[f64], _model: &Model) -> Result<()> {
        Ok(())
    }

    /// Layer at which the hook stopped intervening during the last step.
    fn termination_layer(&self) -> Option<usize> {
        None
    }
}

/// Leaves attention untouched.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityHook;

impl AttentionHook for IdentityHook {
    fn on_attention(&mut self, _pre: &AttentionSnapshot, _rows: &mut [Vec<f64>]) -> Result<()> {
        Ok(())
    }
}

impl<H: AttentionHook + ?Sized> AttentionHook for &mut H {
    fn inject(&mut self, layer: usize, visual: &Range<usize>, rows: &mut [Vec<f64>]) -> Result<()> {
        (**self).inject(layer, visual, rows)
    }

    fn on_attention(&mut self, pre: &AttentionSnapshot, rows: &mut [Vec<f64>]) -> Result<()> {
        (**self).on_attention(pre, rows)
    }

    fn on_layer_output(&mut self, layer: usize, hidden: &[f64], model: &Model) -> Result<()> {
        (**self).on_layer_output(layer, hidden, model)
    }

    fn termination_layer(&self) -> Option<usize> {
        (**self).termination_layer()
    }
}
