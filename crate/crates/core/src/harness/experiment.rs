// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment configs and the run/verify pipeline behind the CLI.
//!
//! A config is JSON:
//!
//! ```text
//! {
//!   "model": {"generate": {"seed": 7, "dims": {"n_layers": 6, "n_heads": 2, "head_dim": 4, "vocab": 32}}},
//!   "layout": {"n_sys": 2, "n_vis": 9, "n_usr": 3},
//!   "prompt": [1, 2, ...],
//!   "max_new": 6,
//!   "clvs": {"beta": 0.8, "gamma": 0.8, "delta": 0.5},
//!   "mode": "clvs",
//!   "scripted": {"decay": {"key_token": 4, "decay_layer": 3, "peak": 0.6, "seed": 1}},
//!   "scene": "scene.json",
//!   "object": "object_0",
//!   "output": {"dir": "out"}
//! }
//! ```
//!
//! `model` is either `{"path": "..."}` or `{"generate": {...}}`. Relative
//! model and scene paths resolve against the config file's directory; the
//! output directory resolves against the working directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::oracle::{oracle_forward, OracleRun};
use super::scripted::{ScriptedHook, ScriptedSchedule};
use super::synth::{gen_weights, GenDims};
use crate::analysis::{build_report, ObjectOverlap, Report, Scene, DEFAULT_CLIP_PCT};
use crate::clvs::{unified_positions, ClvsConfig, ClvsSession};
use crate::engine::{generate, Generation, IdentityHook, Model, ModelWeights, TokenLayout};
use crate::error::{Error, Result};
use crate::trace::{write_trace, TraceFile, TraceMode, TRACE_EXTENSION};

pub const DEFAULT_VERIFY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Vanilla,
    Clvs,
    Scripted,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "vanilla" => Ok(Mode::Vanilla),
            "clvs" => Ok(Mode::Clvs),
            "scripted" => Ok(Mode::Scripted),
            other => Err(format!("unknown mode {other:?} (expected vanilla, clvs or scripted)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    Path(PathBuf),
    Generate(GenerateSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub seed: u64,
    pub dims: GenDims,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptSpec {
    /// Explicit schedule.
    Schedule(ScriptedSchedule),
    /// Seeded single-key decay scenario.
    Decay(DecaySpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySpec {
    pub key_token: usize,
    pub decay_layer: usize,
    #[serde(default = "default_peak")]
    pub peak: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_peak() -> f64 {
    0.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    pub layout: TokenLayout,
    pub prompt: Vec<usize>,
    pub max_new: usize,
    #[serde(default)]
    pub clvs: ClvsConfig,
    pub mode: Mode,
    /// Use unified layer-1 positions for smoothed runs.
    #[serde(default = "default_true")]
    pub unified_positions: bool,
    /// Also run the unsmoothed counterpart and write a comparison report.
    #[serde(default = "default_true")]
    pub compare_vanilla: bool,
    #[serde(default)]
    pub scripted: Option<ScriptSpec>,
    #[serde(default)]
    pub scene: Option<PathBuf>,
    #[serde(default)]
    pub object: Option<String>,
    #[serde(default = "default_clip")]
    pub clip_pct: f64,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_clip() -> f64 {
    DEFAULT_CLIP_PCT
}

fn field_error(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

/// Tag a lower-level config error with the field it belongs to.
fn at(field: &str, e: Error) -> Error {
    match e {
        Error::Config(m) | Error::Input(m) => field_error(field, m),
        other => other,
    }
}

impl ExperimentConfig {
    /// Parse JSON, reporting the offending field path on failure.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = match path.as_str() {
                "." | "?" => "<root>".to_string(),
                _ => path,
            };
            field_error(&path, e.into_inner())
        })
    }

    /// Checks that do not need the model.
    pub fn validate(&self) -> Result<()> {
        self.layout.validate().map_err(|e| at("layout", e))?;
        self.clvs.validate(None).map_err(|e| at("clvs", e))?;
        if self.prompt.len() != self.layout.prompt_len() {
            return Err(field_error(
                "prompt",
                format!(
                    "has {} tokens, layout declares n_sys + n_vis + n_usr = {}",
                    self.prompt.len(),
                    self.layout.prompt_len()
                ),
            ));
        }
        match (self.mode, &self.scripted) {
            (Mode::Scripted, None) => {
                return Err(field_error("scripted", "required when mode is \"scripted\""))
            }
            (Mode::Vanilla | Mode::Clvs, Some(_)) => {
                return Err(field_error("scripted", "only allowed when mode is \"scripted\""))
            }
            _ => {}
        }
        if !(self.clip_pct > 0.0) {
            return Err(field_error("clip_pct", "must be positive"));
        }
        if self.object.is_some() && self.scene.is_none() && self.mode != Mode::Scripted {
            return Err(field_error("object", "needs a scene"));
        }
        Ok(())
    }
}

/// A config resolved into runnable pieces.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: Model,
    pub schedule: Option<ScriptedSchedule>,
    pub scene: Option<Scene>,
    pub base_dir: PathBuf,
}

impl Experiment {
    /// Read and resolve a config file. `seed` overrides a generated model's seed.
    pub fn load(path: impl AsRef<Path>, seed: Option<u64>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let config = ExperimentConfig::from_json(&bytes)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::resolve(config, base, seed)
    }

    /// Build the model, schedule and scene. `seed` overrides a generated model's seed.
    pub fn resolve(config: ExperimentConfig, base_dir: PathBuf, seed: Option<u64>) -> Result<Self> {
        config.validate()?;
        let weights = match &config.model {
            ModelSource::Path(p) => ModelWeights::load(base_dir.join(p)).map_err(|e| match e {
                Error::Io { .. } | Error::Json(_) | Error::Validation(_) => {
                    field_error("model.path", e)
                }
                other => at("model.path", other),
            })?,
            ModelSource::Generate(g) => gen_weights(seed.unwrap_or(g.seed), &g.dims)
                .map_err(|e| at("model.generate.dims", e))?,
        };
        let model = Model::new(weights).map_err(|e| at("model", e))?;
        let mc = model.config();
        config
            .clvs
            .validate(Some(mc.n_layers))
            .map_err(|e| at("clvs", e))?;
        if config.clvs.topk > mc.vocab {
            return Err(field_error(
                "clvs.topk",
                format!("{} exceeds vocabulary size {}", config.clvs.topk, mc.vocab),
            ));
        }
        if let Some(i) = config.prompt.iter().position(|&t| t >= mc.vocab) {
            return Err(field_error(
                &format!("prompt[{i}]"),
                format!("token id {} outside vocabulary of size {}", config.prompt[i], mc.vocab),
            ));
        }
        let schedule = match &config.scripted {
            None => None,
            Some(ScriptSpec::Schedule(s)) => {
                s.validate(mc.n_layers, mc.n_heads, config.layout.n_vis)
                    .map_err(|e| at("scripted.schedule", e))?;
                Some(s.clone())
            }
            Some(ScriptSpec::Decay(d)) => Some(
                ScriptedSchedule::decay(
                    mc.n_layers,
                    mc.n_heads,
                    config.layout.n_vis,
                    d.key_token,
                    d.decay_layer,
                    d.peak,
                    d.seed,
                )
                .map_err(|e| at("scripted.decay", e))?,
            ),
        };
        if schedule.is_some() && config.layout.n_sys + config.layout.n_usr == 0 {
            return Err(field_error(
                "layout",
                "scripted mode needs at least one non-visual prompt token",
            ));
        }
        let scene = match &config.scene {
            None => None,
            Some(p) => {
                let scene = Scene::load(base_dir.join(p)).map_err(|e| field_error("scene", e))?;
                if scene.grid.n_patches() != config.layout.n_vis {
                    return Err(field_error(
                        "scene",
                        format!(
                            "grid has {} patches, layout has {} visual tokens",
                            scene.grid.n_patches(),
                            config.layout.n_vis
                        ),
                    ));
                }
                if let Some(name) = &config.object {
                    if scene.object(name).is_none() {
                        return Err(field_error("object", format!("no object named {name:?} in scene")));
                    }
                }
                Some(scene)
            }
        };
        Ok(Self {
            config,
            model,
            schedule,
            scene,
            base_dir,
        })
    }

    /// Layer-1 positions for a run of the given kind.
    pub fn positions(&self, kind: TraceMode) -> Vec<usize> {
        if kind.is_clvs() && self.config.unified_positions && kind != TraceMode::ScriptedClvs {
            unified_positions(&self.config.layout)
        } else {
            self.config.layout.original_positions()
        }
    }

    /// Run kinds implied by the mode.
    pub fn kinds(&self, mode: Mode) -> Vec<TraceMode> {
        match mode {
            Mode::Vanilla => vec![TraceMode::Vanilla],
            Mode::Clvs if self.config.compare_vanilla => vec![TraceMode::Vanilla, TraceMode::Clvs],
            Mode::Clvs => vec![TraceMode::Clvs],
            Mode::Scripted if self.config.compare_vanilla => {
                vec![TraceMode::ScriptedVanilla, TraceMode::ScriptedClvs]
            }
            Mode::Scripted => vec![TraceMode::ScriptedClvs],
        }
    }

    /// Run the engine for one kind and assemble its trace.
    pub fn run_engine(&self, kind: TraceMode) -> Result<EngineRun> {
        let cfg = &self.config;
        let positions = self.positions(kind);
        let n_layers = self.model.config().n_layers;
        let gen = |hook: Option<&mut dyn crate::engine::AttentionHook>| {
            generate(&self.model, &cfg.prompt, &cfg.layout, &positions, cfg.max_new, hook)
        };
        let (generation, session) = match kind {
            TraceMode::Vanilla => (gen(None)?, None),
            TraceMode::Clvs => {
                let mut s = ClvsSession::new(cfg.clvs.clone(), n_layers)?;
                (gen(Some(&mut s))?, Some(s))
            }
            TraceMode::ScriptedVanilla => {
                let sched = self.schedule()?;
                let mut hook = ScriptedHook::new(sched, IdentityHook);
                (gen(Some(&mut hook))?, None)
            }
            TraceMode::ScriptedClvs => {
                let sched = self.schedule()?;
                let mut hook = ScriptedHook::new(sched, ClvsSession::new(cfg.clvs.clone(), n_layers)?);
                let g = gen(Some(&mut hook))?;
                (g, Some(hook.into_inner()))
            }
        };
        let trace = TraceFile::from_generation(
            &self.model,
            &cfg.layout,
            &cfg.prompt,
            &cfg.clvs,
            kind,
            &generation,
            session.as_ref(),
        )?;
        Ok(EngineRun {
            kind,
            generation,
            session,
            trace,
        })
    }

    fn schedule(&self) -> Result<&ScriptedSchedule> {
        self.schedule
            .as_ref()
            .ok_or_else(|| field_error("scripted", "no schedule configured"))
    }

    /// Reference decode of the same run.
    pub fn run_oracle(&self, kind: TraceMode) -> Result<OracleRun> {
        let cfg = &self.config;
        let clvs = kind.is_clvs().then_some(&cfg.clvs);
        let schedule = match kind {
            TraceMode::ScriptedVanilla | TraceMode::ScriptedClvs => Some(self.schedule()?),
            _ => None,
        };
        oracle_forward(
            self.model.weights(),
            &cfg.prompt,
            &cfg.layout,
            &self.positions(kind),
            cfg.max_new,
            clvs,
            schedule,
        )
    }

    /// Object used for the report: the configured scene object, the scene's
    /// first object, the scripted key token, or the whole image.
    pub fn report_object(&self) -> ObjectOverlap {
        let n_vis = self.config.layout.n_vis;
        if let Some(scene) = &self.scene {
            if let Some(o) = self.config.object.as_deref().and_then(|n| scene.object(n)) {
                return o;
            }
            if let Some(o) = scene.overlaps().into_iter().next() {
                return o;
            }
        }
        if let Some(s) = &self.schedule {
            return ObjectOverlap::one_hot("key_token", n_vis, &[s.key_token]);
        }
        ObjectOverlap {
            name: "whole_image".into(),
            overlap: vec![1.0; n_vis],
        }
    }
}

/// One engine run with everything needed to trace and verify it.
#[derive(Debug, Clone)]
pub struct EngineRun {
    pub kind: TraceMode,
    pub generation: Generation,
    pub session: Option<ClvsSession>,
    pub trace: TraceFile,
}

impl EngineRun {
    pub fn memory_trajectories(&self) -> Vec<Vec<Vec<f64>>> {
        self.session
            .as_ref()
            .map(ClvsSession::memory_trajectories)
            .unwrap_or_default()
    }

    pub fn termination_layers(&self) -> Vec<Option<usize>> {
        self.generation
            .steps
            .iter()
            .map(|s| s.termination_layer)
            .collect()
    }
}

/// Compare an engine run with the reference decoder.
pub fn compare_with_oracle(run: &EngineRun, oracle: &OracleRun, tolerance: f64) -> Result<()> {
    let kind = run.kind;
    if run.generation.tokens != oracle.tokens {
        return Err(Error::Verification(format!(
            "{kind:?}: engine tokens {:?} differ from reference {:?}",
            run.generation.tokens, oracle.tokens
        )));
    }
    let terms = run.termination_layers();
    if terms != oracle.termination_layers {
        return Err(Error::Verification(format!(
            "{kind:?}: termination layers {terms:?} differ from reference {:?}",
            oracle.termination_layers
        )));
    }
    for (step, (a, b)) in run.generation.steps.iter().zip(&oracle.logits).enumerate() {
        let diff = max_abs_diff(&a.logits, b);
        if !(diff <= tolerance) {
            return Err(Error::Verification(format!(
                "{kind:?}: step {step} logits differ by {diff:e} (tolerance {tolerance:e})"
            )));
        }
    }
    let mem = run.memory_trajectories();
    if mem.len() != oracle.memory.len() {
        return Err(Error::Verification(format!(
            "{kind:?}: {} memory trajectories vs {} in reference",
            mem.len(),
            oracle.memory.len()
        )));
    }
    for (step, (a, b)) in mem.iter().zip(&oracle.memory).enumerate() {
        if a.len() != b.len() {
            return Err(Error::Verification(format!(
                "{kind:?}: step {step} has {} memory layers vs {} in reference",
                a.len(),
                b.len()
            )));
        }
        for (layer, (ma, mb)) in a.iter().zip(b).enumerate() {
            let diff = max_abs_diff(ma, mb);
            if !(diff <= tolerance) {
                return Err(Error::Verification(format!(
                    "{kind:?}: step {step} layer {} memory differs by {diff:e} (tolerance {tolerance:e})",
                    layer + 1
                )));
            }
        }
    }
    Ok(())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: Option<Mode>,
    pub out_dir: Option<PathBuf>,
    pub verify: bool,
    pub tolerance: f64,
    /// Write traces and report; `false` only verifies.
    pub write: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            mode: None,
            out_dir: None,
            verify: false,
            tolerance: DEFAULT_VERIFY_TOLERANCE,
            write: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub runs: Vec<EngineRun>,
    pub trace_paths: Vec<PathBuf>,
    pub report: Option<Report>,
    pub verified: bool,
}

pub fn trace_file_name(kind: TraceMode) -> String {
    let stem = match kind {
        TraceMode::Vanilla => "vanilla",
        TraceMode::Clvs => "clvs",
        TraceMode::ScriptedVanilla => "scripted_vanilla",
        TraceMode::ScriptedClvs => "scripted_clvs",
    };
    format!("{stem}.{TRACE_EXTENSION}")
}

/// Run every kind the mode implies, optionally verify, and write outputs.
pub fn run_experiment(exp: &Experiment, opts: &RunOptions) -> Result<RunOutcome> {
    let mode = opts.mode.unwrap_or(exp.config.mode);
    if mode == Mode::Scripted && exp.schedule.is_none() {
        return Err(field_error("scripted", "required when mode is \"scripted\""));
    }
    if mode != Mode::Scripted && exp.schedule.is_some() && opts.mode.is_some() {
        return Err(field_error("mode", "config carries a scripted schedule; only --mode scripted applies"));
    }
    let mut runs = Vec::new();
    for kind in exp.kinds(mode) {
        let run = exp.run_engine(kind)?;
        if opts.verify {
            let oracle = exp.run_oracle(kind)?;
            compare_with_oracle(&run, &oracle, opts.tolerance)?;
        }
        runs.push(run);
    }

    let report = match runs.as_slice() {
        [v, c] => Some(build_report(&v.trace, &c.trace, &exp.report_object(), exp.config.clip_pct)?),
        _ => None,
    };

    let mut trace_paths = Vec::new();
    if opts.write {
        let dir = opts
            .out_dir
            .clone()
            .or_else(|| exp.config.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for run in &runs {
            let p = dir.join(trace_file_name(run.kind));
            write_trace(&p, &run.trace)?;
            trace_paths.push(p);
        }
        if let Some(r) = &report {
            r.write(&dir)?;
        }
    }
    Ok(RunOutcome {
        runs,
        trace_paths,
        report,
        verified: opts.verify,
    })
}
