// SPDX-License-Identifier: MIT OR Apache-2.0

//! The smoothing intervention as an [`AttentionHook`].

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::ops::{init_memory, renormalize, smooth, uncertainty, update_memory, VisionMemory};
use crate::engine::{AttentionHook, AttentionSnapshot, Model};
use crate::error::{Error, Result};

/// Smoothing strength, memory retention and termination threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClvsConfig {
    /// Weight of the layer's own visual attention in the smoothed value.
    pub beta: f64,
    /// Retention of the previous memory in each update.
    pub gamma: f64,
    /// Uncertainty below which smoothing stops for the rest of the step.
    pub delta: f64,
    /// First layer whose output is checked for termination.
    /// `None` means `ceil((L + 1) / 2)`.
    #[serde(default)]
    pub gate_start_layer: Option<usize>,
    #[serde(default = "default_topk")]
    pub topk: usize,
}

fn default_topk() -> usize {
    10
}

impl Default for ClvsConfig {
    fn default() -> Self {
        Self {
            beta: 0.8,
            gamma: 0.8,
            delta: 0.5,
            gate_start_layer: None,
            topk: default_topk(),
        }
    }
}

/// `ceil((L + 1) / 2)`: 17 for a 32-layer model, 3 for 4 or 5 layers.
pub fn default_gate_start(n_layers: usize) -> usize {
    (n_layers + 2) / 2
}

impl ClvsConfig {
    /// Check ranges. `n_layers` bounds the gate start layer when given.
    pub fn validate(&self, n_layers: Option<usize>) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma), ("delta", self.delta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.topk == 0 {
            return Err(Error::Config("topk must be at least 1".into()));
        }
        if let Some(g) = self.gate_start_layer {
            if g == 0 {
                return Err(Error::Config("gate_start_layer is 1-based".into()));
            }
            if let Some(l) = n_layers {
                if g > l {
                    return Err(Error::Config(format!(
                        "gate_start_layer {g} exceeds layer count {l}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn gate_start(&self, n_layers: usize) -> usize {
        self.gate_start_layer
            .unwrap_or_else(|| default_gate_start(n_layers))
    }
}

/// Mutable state for the step in progress.
#[derive(Debug, Clone, PartialEq)]
pub struct ClvsSessionState {
    pub memory: Option<VisionMemory>,
    pub terminated: bool,
    pub termination_layer: Option<usize>,
    pub config: ClvsConfig,
}

/// What the session did at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerLog {
    pub layer: usize,
    /// Per-head smoothed visual slices before renormalization, for layers
    /// that were smoothed.
    pub smoothed: Option<Vec<Vec<f64>>>,
    /// Memory after this layer's update (unchanged when nothing ran).
    pub memory: Vec<f64>,
    /// Uncertainty evaluated on this layer's output, when the gate is open.
    pub uncertainty: Option<f64>,
    /// Whether the session is terminated after this layer.
    pub terminated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expect {
    Attention(usize),
    Output(usize),
}

/// One generation's worth of smoothing state, driven by the engine.
///
/// The memory is rebuilt from layer-1 attention at the start of every step;
/// nothing carries over between steps except the logs.
#[derive(Debug, Clone)]
pub struct ClvsSession {
    state: ClvsSessionState,
    n_layers: usize,
    gate_start: usize,
    expect: Expect,
    steps: Vec<Vec<LayerLog>>,
}

impl ClvsSession {
    pub fn new(config: ClvsConfig, n_layers: usize) -> Result<Self> {
        config.validate(Some(n_layers))?;
        let gate_start = config.gate_start(n_layers);
        Ok(Self {
            state: ClvsSessionState {
                memory: None,
                terminated: false,
                termination_layer: None,
                config,
            },
            n_layers,
            gate_start,
            expect: Expect::Attention(1),
            steps: Vec::new(),
        })
    }

    pub fn config(&self) -> &ClvsConfig {
        &self.state.config
    }

    pub fn state(&self) -> &ClvsSessionState {
        &self.state
    }

    pub fn gate_start(&self) -> usize {
        self.gate_start
    }

    /// Per-step, per-layer logs in the order they were produced.
    pub fn step_logs(&self) -> &[Vec<LayerLog>] {
        &self.steps
    }

    /// Memory after each layer for every step (`steps x L x N_v`).
    pub fn memory_trajectories(&self) -> Vec<Vec<Vec<f64>>> {
        self.steps
            .iter()
            .map(|s| s.iter().map(|l| l.memory.clone()).collect())
            .collect()
    }

    fn begin_step(&mut self) {
        self.state.memory = None;
        self.state.terminated = false;
        self.state.termination_layer = None;
        self.steps.push(Vec::with_capacity(self.n_layers));
    }

    fn smooth_rows(&self, pre: &AttentionSnapshot, rows: &mut [Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let memory = self
            .state
            .memory
            .as_ref()
            .ok_or_else(|| Error::InvariantViolation("vision memory not initialized".into()))?;
        let beta = self.state.config.beta;
        let visual: Range<usize> = pre.visual.clone();
        let mut smoothed_slices = Vec::with_capacity(rows.len());
        for (row, pre_row) in rows.iter_mut().zip(&pre.rows) {
            let smoothed = smooth(&pre_row[visual.clone()], memory, beta)?;
            let mut full = pre_row.clone();
            full[visual.clone()].copy_from_slice(&smoothed);
            *row = renormalize(&full)?;
            smoothed_slices.push(smoothed);
        }
        Ok(smoothed_slices)
    }
}

impl AttentionHook for ClvsSession {
    fn on_attention(&mut self, pre: &AttentionSnapshot, rows: &mut [Vec<f64>]) -> Result<()> {
        let layer = pre.layer;
        if layer == 1 {
            if self.expect != Expect::Attention(1) && self.expect != Expect::Attention(self.n_layers + 1) {
                return Err(Error::Protocol(format!(
                    "step restarted at layer 1 while expecting {:?}",
                    self.expect
                )));
            }
            self.begin_step();
        } else if self.expect != Expect::Attention(layer) {
            return Err(Error::Protocol(format!(
                "attention for layer {layer} arrived while expecting {:?}",
                self.expect
            )));
        }
        if layer > self.n_layers {
            return Err(Error::Protocol(format!(
                "layer {layer} beyond model depth {}",
                self.n_layers
            )));
        }

        let raw = pre.visual_slices();
        let mut smoothed = None;
        if layer == 1 {
            self.state.memory = Some(init_memory(&raw)?);
        } else if !self.state.terminated {
            smoothed = Some(self.smooth_rows(pre, rows)?);
            let memory = self.state.memory.as_ref().expect("checked in smooth_rows");
            self.state.memory = Some(update_memory(memory, &raw, self.state.config.gamma, layer)?);
        }

        let memory = self
            .state
            .memory
            .as_ref()
            .map(|m| m.values.clone())
            .unwrap_or_default();
        self.steps.last_mut().expect("step begun").push(LayerLog {
            layer,
            smoothed,
            memory,
            uncertainty: None,
            terminated: self.state.terminated,
        });
        self.expect = Expect::Output(layer);
        Ok(())
    }

    fn on_layer_output(&mut self, layer: usize, hidden: &[f64], model: &Model) -> Result<()> {
        if self.expect != Expect::Output(layer) {
            return Err(Error::Protocol(format!(
                "output for layer {layer} arrived while expecting {:?}",
                self.expect
            )));
        }
        if layer >= self.gate_start && !self.state.terminated {
            let probs = model.layer_probe(hidden)?;
            let u = uncertainty(&probs, self.state.config.topk)?;
            if u < self.state.config.delta {
                self.state.terminated = true;
                self.state.termination_layer = Some(layer);
            }
            let log = self
                .steps
                .last_mut()
                .and_then(|s| s.last_mut())
                .expect("layer logged in on_attention");
            log.uncertainty = Some(u);
            log.terminated = self.state.terminated;
        }
        self.expect = Expect::Attention(layer + 1);
        Ok(())
    }

    fn termination_layer(&self) -> Option<usize> {
        self.state.termination_layer
    }
}
