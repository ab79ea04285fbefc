// SPDX-License-Identifier: MIT OR Apache-2.0

//! Injected attention for controlled decay scenarios.
//!
//! A [`ScriptedSchedule`] fixes the visual slice of every head's attention
//! row at every layer. The engine still mixes values and runs the
//! feed-forward with the injected rows, so logit-lens uncertainty stays
//! meaningful. Whatever mass the visual slice leaves over is spread evenly
//! across the row's non-visual positions.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::synth::Uniform;
use crate::engine::{AttentionHook, AttentionSnapshot, Model};
use crate::error::{Error, Result};

/// Background visual attention per entry is drawn from `[0, BACKGROUND_MASS / N_v)`.
pub const BACKGROUND_MASS: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedSchedule {
    /// `L x H x N_v` visual attention to inject.
    pub rows: Vec<Vec<Vec<f64>>>,
    /// Visual token (0-based within the visual span) carrying the object.
    pub key_token: usize,
    /// First layer at which the key token's attention collapses.
    pub decay_layer: usize,
}

impl ScriptedSchedule {
    /// Key token held at `peak` for layers `1..decay_layer`, then 0.
    /// Other visual tokens get small seeded background weights.
    pub fn decay(
        n_layers: usize,
        n_heads: usize,
        n_vis: usize,
        key_token: usize,
        decay_layer: usize,
        peak: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0 - BACKGROUND_MASS).contains(&peak) {
            return Err(Error::Config(format!(
                "peak must lie in [0, {}], got {peak}",
                1.0 - BACKGROUND_MASS
            )));
        }
        let mut rng = Uniform::new(seed);
        let rows = (1..=n_layers)
            .map(|layer| {
                (0..n_heads)
                    .map(|_| {
                        (0..n_vis)
                            .map(|i| {
                                let bg = rng.range(0.0, BACKGROUND_MASS / n_vis as f64);
                                if i == key_token {
                                    if layer < decay_layer {
                                        peak
                                    } else {
                                        0.0
                                    }
                                } else {
                                    bg
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let s = Self {
            rows,
            key_token,
            decay_layer,
        };
        s.validate(n_layers, n_heads, n_vis)?;
        Ok(s)
    }

    pub fn validate(&self, n_layers: usize, n_heads: usize, n_vis: usize) -> Result<()> {
        if self.rows.len() != n_layers {
            return Err(Error::Config(format!(
                "schedule has {} layers, model has {n_layers}",
                self.rows.len()
            )));
        }
        for (l, heads) in self.rows.iter().enumerate() {
            if heads.len() != n_heads {
                return Err(Error::Config(format!(
                    "schedule layer {} has {} heads, model has {n_heads}",
                    l + 1,
                    heads.len()
                )));
            }
            for (h, row) in heads.iter().enumerate() {
                if row.len() != n_vis {
                    return Err(Error::Config(format!(
                        "schedule layer {} head {h} has {} entries, layout has {n_vis} visual tokens",
                        l + 1,
                        row.len()
                    )));
                }
                if row.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                    return Err(Error::Config(format!(
                        "schedule layer {} head {h} has a negative entry",
                        l + 1
                    )));
                }
                if row.iter().sum::<f64>() > 1.0 {
                    return Err(Error::Config(format!(
                        "schedule layer {} head {h} sums above 1",
                        l + 1
                    )));
                }
            }
        }
        if self.key_token >= n_vis {
            return Err(Error::Config(format!(
                "key_token {} outside {n_vis} visual tokens",
                self.key_token
            )));
        }
        if self.decay_layer == 0 || self.decay_layer > n_layers {
            return Err(Error::Config(format!(
                "decay_layer {} outside 1..={n_layers}",
                self.decay_layer
            )));
        }
        Ok(())
    }

    /// Overwrite `rows` with the schedule for `layer`.
    pub fn apply(&self, layer: usize, visual: &Range<usize>, rows: &mut [Vec<f64>]) -> Result<()> {
        let script = &self.rows[layer - 1];
        for (row, vis) in rows.iter_mut().zip(script) {
            let ctx = row.len();
            let n_other = ctx - visual.len();
            let rest = 1.0 - vis.iter().sum::<f64>();
            if n_other == 0 {
                return Err(Error::Config(
                    "scripted attention needs at least one non-visual position in context".into(),
                ));
            }
            let share = rest / n_other as f64;
            for (j, a) in row.iter_mut().enumerate() {
                *a = if visual.contains(&j) {
                    vis[j - visual.start]
                } else {
                    share
                };
            }
        }
        Ok(())
    }
}

/// Injects a schedule, then defers to an inner hook.
pub struct ScriptedHook<'a, H> {
    schedule: &'a ScriptedSchedule,
    inner: H,
}

impl<'a, H: AttentionHook> ScriptedHook<'a, H> {
    pub fn new(schedule: &'a ScriptedSchedule, inner: H) -> Self {
        Self { schedule, inner }
    }

    pub fn inner(&self) -> &H {
        &self.inner
    }

    pub fn into_inner(self) -> H {
        self.inner
    }
}

impl<H: AttentionHook> AttentionHook for ScriptedHook<'_, H> {
    fn inject(&mut self, layer: usize, visual: &Range<usize>, rows: &mut [Vec<f64>]) -> Result<()> {
        self.schedule.apply(layer, visual, rows)
    }

    fn on_attention(&mut self, pre: &AttentionSnapshot, rows: &mut [Vec<f64>]) -> Result<()> {
        self.inner.on_attention(pre, rows)
    }

    fn on_layer_output(&mut self, layer: usize, hidden: &[f64], model: &Model) -> Result<()> {
        self.inner.on_layer_output(layer, hidden, model)
    }

    fn termination_layer(&self) -> Option<usize> {
        self.inner.termination_layer()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_schedule_shape() {
        let s = ScriptedSchedule::decay(6, 2, 4, 1, 3, 0.6, 7).unwrap();
        assert_eq!(s.rows.len(), 6);
        assert_eq!(s.rows[0][1][1], 0.6);
        assert_eq!(s.rows[1][0][1], 0.6);
        assert_eq!(s.rows[2][0][1], 0.0);
        assert_eq!(s.rows[5][1][1], 0.0);
        for heads in &s.rows {
            for row in heads {
                assert!(row.iter().sum::<f64>() <= 0.9 + 1e-12);
            }
        }
    }

    #[test]
    fn applied_rows_are_normalized() {
        let s = ScriptedSchedule::decay(2, 1, 2, 0, 2, 0.6, 1).unwrap();
        let mut rows = vec![vec![0.2; 5]];
        s.apply(1, &(1..3), &mut rows).unwrap();
        assert!((rows[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(rows[0][1], 0.6);
        assert_eq!(rows[0][0], rows[0][4]);
    }

    #[test]
    fn bad_schedules_are_rejected() {
        assert!(ScriptedSchedule::decay(4, 1, 3, 5, 2, 0.6, 0).is_err());
        assert!(ScriptedSchedule::decay(4, 1, 3, 0, 9, 0.6, 0).is_err());
        assert!(ScriptedSchedule::decay(4, 1, 3, 0, 2, 0.95, 0).is_err());
        let s = ScriptedSchedule::decay(4, 1, 3, 0, 2, 0.6, 0).unwrap();
        assert!(s.validate(4, 2, 3).is_err());
    }
}
