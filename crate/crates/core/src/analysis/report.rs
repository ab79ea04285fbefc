// SPDX-License-Identifier: MIT OR Apache-2.0

//! Paired vanilla/smoothed trace comparison.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{convergence_layer, key_object_attention, peak_layer, relative_increase, AttentionSeries};
use super::scene::ObjectOverlap;
use super::stats::{logistic_fit, point_biserial, LogisticFit};
use crate::error::{Error, Result};
use crate::trace::{TraceFile, TraceRecord};

pub const DEFAULT_CLIP_PCT: f64 = 100.0;
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

/// Head-mean visual attention actually used at one record.
pub fn used_visual_attention(record: &TraceRecord) -> Vec<f64> {
    let rows = &record.post_visual_attention;
    let n_v = rows.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; n_v];
    for row in rows {
        mean.iter_mut().zip(row).for_each(|(m, a)| *m += a);
    }
    let h = rows.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= h);
    mean
}

/// `a_obj` per layer for one step.
pub fn step_series(records: &[TraceRecord], object: &ObjectOverlap) -> Result<AttentionSeries> {
    records
        .iter()
        .map(|r| key_object_attention(&used_visual_attention(r), object))
        .collect::<Result<Vec<_>>>()
        .map(AttentionSeries)
}

/// `a_obj` per layer averaged over all steps of a trace.
pub fn trace_series(trace: &TraceFile, object: &ObjectOverlap) -> Result<AttentionSeries> {
    let l = trace.header.model.n_layers;
    let n = trace.n_steps();
    if n == 0 {
        return Err(Error::Input("trace has no steps".into()));
    }
    let mut acc = vec![0.0; l];
    for step in trace.steps() {
        for (a, v) in acc.iter_mut().zip(step_series(step, object)?.0) {
            *a += v;
        }
    }
    Ok(AttentionSeries(acc.into_iter().map(|a| a / n as f64).collect()))
}

/// `(uncertainty, converged)` pairs for every gated layer of every step.
pub fn uncertainty_convergence_pairs(trace: &TraceFile) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut u = Vec::new();
    let mut converged = Vec::new();
    for step in trace.steps() {
        let profile = convergence_layer(step)?;
        for r in step {
            if let Some(v) = r.uncertainty {
                u.push(v);
                converged.push(profile.converged_at(r.layer));
            }
        }
    }
    Ok((u, converged))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyStats {
    pub n_samples: usize,
    pub n_converged: usize,
    pub point_biserial: Option<f64>,
    pub logistic: Option<LogisticFit>,
    /// Why a statistic is missing, when one is.
    pub note: Option<String>,
}

pub fn uncertainty_stats(values: &[f64], flags: &[bool]) -> UncertaintyStats {
    let mut notes = Vec::new();
    let pb = point_biserial(values, flags)
        .map_err(|e| notes.push(format!("point-biserial: {e}")))
        .ok();
    let lr = logistic_fit(values, flags)
        .map_err(|e| notes.push(format!("logistic: {e}")))
        .ok();
    UncertaintyStats {
        n_samples: values.len(),
        n_converged: flags.iter().filter(|&&f| f).count(),
        point_biserial: pb,
        logistic: lr,
        note: (!notes.is_empty()).then(|| notes.join("; ")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub layer: usize,
    pub a_obj_vanilla: f64,
    pub a_obj_clvs: f64,
    pub relative_increase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub object: String,
    pub clip_pct: f64,
    pub layers: Vec<LayerRow>,
    pub peak_layer_vanilla: usize,
    pub peak_layer_clvs: usize,
    /// Peak layer of each vanilla step.
    pub step_peak_layers_vanilla: Vec<usize>,
    pub mean_relative_increase: f64,
    pub convergence_layers_vanilla: Vec<usize>,
    pub convergence_layers_clvs: Vec<usize>,
    /// First terminated layer of each smoothed step, if any.
    pub termination_layers: Vec<Option<usize>>,
    pub tokens_vanilla: Vec<usize>,
    pub tokens_clvs: Vec<usize>,
    /// Uncertainty against convergence on the vanilla trace.
    pub uncertainty: UncertaintyStats,
}

fn check_paired(vanilla: &TraceFile, clvs: &TraceFile) -> Result<()> {
    let (a, b) = (&vanilla.header, &clvs.header);
    if a.model != b.model || a.layout != b.layout {
        return Err(Error::Input(
            "traces describe different models or layouts".into(),
        ));
    }
    Ok(())
}

pub fn build_report(vanilla: &TraceFile, clvs: &TraceFile, object: &ObjectOverlap, clip_pct: f64) -> Result<Report> {
    check_paired(vanilla, clvs)?;
    object.validate()?;
    let sv = trace_series(vanilla, object)?;
    let sc = trace_series(clvs, object)?;
    let rel = relative_increase(&sc, &sv, clip_pct)?;
    let layers = (0..sv.len())
        .map(|i| LayerRow {
            layer: i + 1,
            a_obj_vanilla: sv.0[i],
            a_obj_clvs: sc.0[i],
            relative_increase: rel[i],
        })
        .collect();
    let step_peak_layers_vanilla = vanilla
        .steps()
        .map(|s| step_series(s, object).and_then(|x| peak_layer(&x)))
        .collect::<Result<Vec<_>>>()?;
    let convergence = |t: &TraceFile| {
        t.steps()
            .map(|s| convergence_layer(s).map(|p| p.convergence_layer))
            .collect::<Result<Vec<_>>>()
    };
    let termination_layers = clvs
        .steps()
        .map(|s| s.iter().find(|r| r.terminated).map(|r| r.layer))
        .collect();
    let (u, flags) = uncertainty_convergence_pairs(vanilla)?;
    Ok(Report {
        object: object.name.clone(),
        clip_pct,
        layers,
        peak_layer_vanilla: peak_layer(&sv)?,
        peak_layer_clvs: peak_layer(&sc)?,
        step_peak_layers_vanilla,
        mean_relative_increase: rel.iter().sum::<f64>() / rel.len() as f64,
        convergence_layers_vanilla: convergence(vanilla)?,
        convergence_layers_clvs: convergence(clvs)?,
        termination_layers,
        tokens_vanilla: vanilla.header.tokens.clone(),
        tokens_clvs: clvs.header.tokens.clone(),
        uncertainty: uncertainty_stats(&u, &flags),
    })
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,a_obj_vanilla,a_obj_clvs,relative_increase\n");
        for r in &self.layers {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.layer, r.a_obj_vanilla, r.a_obj_clvs, r.relative_increase
            ));
        }
        out
    }

    /// Write `report.json` and `report.csv` into `dir`, creating it if needed.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(REPORT_JSON);
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(&json, bytes).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join(REPORT_CSV);
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}
