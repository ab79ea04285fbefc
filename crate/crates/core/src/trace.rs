// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-step, per-layer attention traces as JSON Lines.
//!
//! Line 1 is a [`TraceHeader`]; every following line is one [`TraceRecord`],
//! ordered by `(step, layer)` with all `L` layers present for each step.
//! Only the visual slice of each attention row is stored (`H x N_v`).
//! Serialization is canonical: struct field order is fixed and floats use
//! the shortest representation that round-trips, so equal traces produce
//! equal bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clvs::{uncertainty, ClvsConfig, ClvsSession};
use crate::engine::math::argmax;
use crate::engine::{Generation, Model, TokenLayout};
use crate::error::{Error, Result};

/// Conventional file extension.
pub const TRACE_EXTENSION: &str = "clvstrace.jsonl";
pub const TRACE_FORMAT: &str = "clvs-trace/1";

const ROW_SUM_SLACK: f64 = 1e-9;

/// How the traced run treated attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    Vanilla,
    Clvs,
    ScriptedVanilla,
    ScriptedClvs,
}

impl TraceMode {
    pub fn is_clvs(self) -> bool {
        matches!(self, TraceMode::Clvs | TraceMode::ScriptedClvs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub hidden: usize,
    pub vocab: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub engine_version: String,
    pub seed: u64,
    pub mode: TraceMode,
    pub model: ModelSummary,
    pub layout: TokenLayout,
    pub clvs: ClvsConfig,
    /// Resolved first gated layer.
    pub gate_start_layer: usize,
    pub prompt: Vec<usize>,
    pub tokens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub layer: usize,
    /// `H x N_v`, as computed.
    pub pre_visual_attention: Vec<Vec<f64>>,
    /// `H x N_v`, as used.
    pub post_visual_attention: Vec<Vec<f64>>,
    /// Vision memory after this layer; empty for runs without smoothing.
    pub memory: Vec<f64>,
    /// Logit-lens uncertainty of this layer's output, for gated layers only.
    pub uncertainty: Option<f64>,
    pub terminated: bool,
    pub layer_argmax_token: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

impl TraceFile {
    /// Assemble a trace from a finished generation.
    ///
    /// Uncertainty is recorded for every layer at or past the gate whether or
    /// not smoothing was active, so vanilla traces carry the same observable.
    pub fn from_generation(
        model: &Model,
        layout: &TokenLayout,
        prompt: &[usize],
        clvs: &ClvsConfig,
        mode: TraceMode,
        generation: &Generation,
        session: Option<&ClvsSession>,
    ) -> Result<Self> {
        let cfg = model.config();
        let gate = clvs.gate_start(cfg.n_layers);
        let logs = session.map(|s| s.step_logs());
        if let Some(logs) = logs {
            if logs.len() != generation.steps.len() {
                return Err(Error::InvariantViolation(format!(
                    "session logged {} steps, generation has {}",
                    logs.len(),
                    generation.steps.len()
                )));
            }
        }
        let mut records = Vec::with_capacity(generation.steps.len() * cfg.n_layers);
        for (step, out) in generation.steps.iter().enumerate() {
            for li in 0..cfg.n_layers {
                let layer = li + 1;
                let probs = model.layer_probe(&out.hidden_states[li])?;
                let u = if layer >= gate {
                    Some(uncertainty(&probs, clvs.topk)?)
                } else {
                    None
                };
                let (memory, terminated) = match logs {
                    Some(logs) => {
                        let log = &logs[step][li];
                        (log.memory.clone(), log.terminated)
                    }
                    None => (Vec::new(), false),
                };
                records.push(TraceRecord {
                    step,
                    layer,
                    pre_visual_attention: out.pre_attention[li].visual_slices(),
                    post_visual_attention: out.post_attention[li].visual_slices(),
                    memory,
                    uncertainty: u,
                    terminated,
                    layer_argmax_token: argmax(&probs),
                });
            }
        }
        let header = TraceHeader {
            format: TRACE_FORMAT.to_string(),
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            mode,
            model: ModelSummary {
                n_layers: cfg.n_layers,
                n_heads: cfg.n_heads,
                head_dim: cfg.head_dim,
                hidden: cfg.hidden,
                vocab: cfg.vocab,
            },
            layout: *layout,
            clvs: clvs.clone(),
            gate_start_layer: gate,
            prompt: prompt.to_vec(),
            tokens: generation.tokens.clone(),
        };
        let trace = Self { header, records };
        trace.validate()?;
        Ok(trace)
    }

    pub fn n_steps(&self) -> usize {
        self.records.len() / self.header.model.n_layers.max(1)
    }

    /// Records of one step, in layer order.
    pub fn step(&self, step: usize) -> &[TraceRecord] {
        let l = self.header.model.n_layers;
        &self.records[step * l..(step + 1) * l]
    }

    pub fn steps(&self) -> impl Iterator<Item = &[TraceRecord]> {
        self.records.chunks(self.header.model.n_layers.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        let n_layers = h.model.n_layers;
        let n_heads = h.model.n_heads;
        let n_vis = h.layout.n_vis;
        if h.format != TRACE_FORMAT {
            return Err(Error::Validation(format!("unknown trace format {:?}", h.format)));
        }
        if n_layers == 0 {
            return Err(Error::Validation("header declares zero layers".into()));
        }
        if self.records.len() % n_layers != 0 {
            return Err(Error::Validation(format!(
                "{} records is not a whole number of {n_layers}-layer steps",
                self.records.len()
            )));
        }
        for (i, r) in self.records.iter().enumerate() {
            let (step, layer) = (i / n_layers, i % n_layers + 1);
            if (r.step, r.layer) != (step, layer) {
                return Err(Error::Validation(format!(
                    "record {i} is (step {}, layer {}), expected (step {step}, layer {layer}); records must be sorted and complete",
                    r.step, r.layer
                )));
            }
            for (what, rows) in [("pre", &r.pre_visual_attention), ("post", &r.post_visual_attention)] {
                if rows.len() != n_heads || rows.iter().any(|row| row.len() != n_vis) {
                    return Err(Error::Validation(format!(
                        "step {step} layer {layer}: {what} attention is not {n_heads} x {n_vis}"
                    )));
                }
                for row in rows {
                    if row.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                        return Err(Error::Validation(format!(
                            "step {step} layer {layer}: negative or non-finite {what} attention"
                        )));
                    }
                    if row.iter().sum::<f64>() > 1.0 + ROW_SUM_SLACK {
                        return Err(Error::Validation(format!(
                            "step {step} layer {layer}: {what} visual attention sums above 1"
                        )));
                    }
                }
            }
            if !(r.memory.is_empty() || r.memory.len() == n_vis) {
                return Err(Error::Validation(format!(
                    "step {step} layer {layer}: memory has {} entries, expected {n_vis}",
                    r.memory.len()
                )));
            }
            if r.uncertainty.is_some() != (layer >= h.gate_start_layer) {
                return Err(Error::Validation(format!(
                    "step {step} layer {layer}: uncertainty must be present exactly for layers >= {}",
                    h.gate_start_layer
                )));
            }
            if r.layer_argmax_token >= h.model.vocab {
                return Err(Error::Validation(format!(
                    "step {step} layer {layer}: argmax token outside vocabulary"
                )));
            }
        }
        Ok(())
    }

    /// Canonical JSON-Lines bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.header)?;
        out.push(b'\n');
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.push(b'\n');
        }
        Ok(out)
    }

    /// Parse and validate. `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "empty trace file".into(),
        })?;
        let header: TraceHeader = serde_json::from_str(first).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?;
        let mut records = Vec::new();
        for (i, line) in lines {
            let record: TraceRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(record);
        }
        let trace = Self { header, records };
        trace.validate()?;
        Ok(trace)
    }

    pub fn checksum(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}

pub fn write_trace(path: impl AsRef<Path>, trace: &TraceFile) -> Result<()> {
    let path = path.as_ref();
    trace.validate()?;
    std::fs::write(path, trace.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<TraceFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    TraceFile::from_bytes(&bytes, path)
}

/// Hex SHA-256 of a file's bytes.
pub fn file_checksum(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(n_layers: usize) -> TraceHeader {
        TraceHeader {
            format: TRACE_FORMAT.into(),
            engine_version: "test".into(),
            seed: 1,
            mode: TraceMode::Clvs,
            model: ModelSummary {
                n_layers,
                n_heads: 1,
                head_dim: 2,
                hidden: 2,
                vocab: 10,
            },
            layout: TokenLayout::new(0, 2, 1).unwrap(),
            clvs: ClvsConfig::default(),
            gate_start_layer: 2,
            prompt: vec![1, 2, 3],
            tokens: vec![4],
        }
    }

    fn record(step: usize, layer: usize) -> TraceRecord {
        TraceRecord {
            step,
            layer,
            pre_visual_attention: vec![vec![0.25, 0.5]],
            post_visual_attention: vec![vec![0.3, 0.1 + 0.2]],
            memory: vec![0.25, 0.5],
            uncertainty: (layer >= 2).then_some(0.75),
            terminated: false,
            layer_argmax_token: 3,
        }
    }

    fn sample() -> TraceFile {
        TraceFile {
            header: header(2),
            records: vec![record(0, 1), record(0, 2), record(1, 1), record(1, 2)],
        }
    }

    #[test]
    fn empty_record_list_is_header_only() {
        let t = TraceFile {
            header: header(2),
            records: vec![],
        };
        let bytes = t.to_bytes().unwrap();
        assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 1);
        let back = TraceFile::from_bytes(&bytes, Path::new("t")).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.clvstrace.jsonl");
        let p2 = dir.path().join("b.clvstrace.jsonl");
        let t = sample();
        write_trace(&p1, &t).unwrap();
        write_trace(&p2, &t).unwrap();
        assert_eq!(read_trace(&p1).unwrap(), t);
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn shuffled_records_fail_validation() {
        let mut t = sample();
        t.records.swap(1, 2);
        let bytes = {
            let mut out = serde_json::to_vec(&t.header).unwrap();
            out.push(b'\n');
            for r in &t.records {
                out.extend(serde_json::to_vec(r).unwrap());
                out.push(b'\n');
            }
            out
        };
        assert!(matches!(
            TraceFile::from_bytes(&bytes, Path::new("t")),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn incomplete_step_fails_validation() {
        let mut t = sample();
        t.records.pop();
        assert!(matches!(t.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn truncated_line_names_the_line() {
        let bytes = sample().to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 20];
        match TraceFile::from_bytes(cut, Path::new("t")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn uncertainty_below_gate_is_rejected() {
        let mut t = sample();
        t.records[0].uncertainty = Some(0.1);
        assert!(t.validate().is_err());
    }
}
