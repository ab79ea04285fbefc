// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error,
//! 3 engine/reference disagreement.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use clvs::analysis::{build_report, ObjectOverlap, Scene, DEFAULT_CLIP_PCT};
use clvs::engine::AttentionScale;
use clvs::harness::{
    gen_model, gen_scene, run_experiment, Experiment, GenDims, Mode, RunOptions,
    DEFAULT_VERIFY_TOLERANCE,
};
use clvs::analysis::PatchGrid;
use clvs::trace::read_trace;
use clvs::{Error, Result};

#[derive(Parser)]
#[command(name = "clvs", version, about = "Cross-layer vision smoothing on toy transformers")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for generated models and scenes; overrides the config's model seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Maximum absolute engine/reference difference for logits and memory.
    #[arg(long, global = true, default_value_t = DEFAULT_VERIFY_TOLERANCE)]
    verify_tolerance: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic model file.
    GenModel {
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        #[arg(long, default_value_t = 4)]
        head_dim: usize,
        #[arg(long, default_value_t = 32)]
        vocab: usize,
        /// Feed-forward width; 0 means 4 x hidden.
        #[arg(long, default_value_t = 0)]
        ffn_dim: usize,
        #[arg(long, default_value_t = 10_000.0)]
        rope_base: f64,
        #[arg(long, default_value_t = 1.0)]
        logit_gain: f64,
        /// Scale scores by the full hidden width instead of the head width.
        #[arg(long)]
        hidden_scale: bool,
        /// File name inside the output directory.
        #[arg(long, default_value = "model.json")]
        name: String,
    },
    /// Write a seeded scene with random object boxes.
    GenScene {
        #[arg(long, default_value_t = 3)]
        rows: usize,
        #[arg(long, default_value_t = 3)]
        cols: usize,
        #[arg(long, default_value_t = 2)]
        objects: usize,
        #[arg(long, default_value = "scene.json")]
        name: String,
    },
    /// Run an experiment and write traces plus a report.
    Run {
        /// Override the config's mode.
        #[arg(long)]
        mode: Option<Mode>,
        /// Check every run against the reference decoder.
        #[arg(long)]
        verify: bool,
    },
    /// Check an experiment against the reference decoder without writing files.
    Verify {
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Build a report from a vanilla and a smoothed trace.
    Analyze {
        #[arg(long)]
        vanilla: PathBuf,
        #[arg(long)]
        clvs: PathBuf,
        /// Scene file supplying object overlaps.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Object name within the scene; defaults to its first object.
        #[arg(long)]
        object: Option<String>,
        #[arg(long, default_value_t = DEFAULT_CLIP_PCT)]
        clip: f64,
    },
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_experiment(cli: &Cli) -> Result<Experiment> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config: required for this command".into()))?;
    Experiment::load(path, cli.seed)
}

fn run(cli: &Cli) -> Result<()> {
    if !(cli.verify_tolerance >= 0.0) {
        return Err(Error::Config("--verify-tolerance: must be nonnegative".into()));
    }
    match &cli.command {
        Command::GenModel {
            layers,
            heads,
            head_dim,
            vocab,
            ffn_dim,
            rope_base,
            logit_gain,
            hidden_scale,
            name,
        } => {
            let dims = GenDims {
                n_layers: *layers,
                n_heads: *heads,
                head_dim: *head_dim,
                vocab: *vocab,
                ffn_dim: *ffn_dim,
                rope_base: *rope_base,
                logit_gain: *logit_gain,
                attention_scale: if *hidden_scale {
                    AttentionScale::Hidden
                } else {
                    AttentionScale::PerHead
                },
            };
            let bytes = gen_model(cli.seed.unwrap_or(0), &dims)?;
            let dir = out_dir(cli);
            ensure_dir(&dir)?;
            let path = dir.join(name);
            write_file(&path, &bytes)?;
            println!("{}", path.display());
        }
        Command::GenScene {
            rows,
            cols,
            objects,
            name,
        } => {
            let grid = PatchGrid {
                rows: *rows,
                cols: *cols,
            };
            let scene = gen_scene(cli.seed.unwrap_or(0), grid, *objects)?;
            let dir = out_dir(cli);
            ensure_dir(&dir)?;
            let path = dir.join(name);
            scene.save(&path)?;
            println!("{}", path.display());
        }
        Command::Run { mode, verify } => {
            let exp = load_experiment(cli)?;
            let opts = RunOptions {
                mode: *mode,
                out_dir: cli.out.clone(),
                verify: *verify,
                tolerance: cli.verify_tolerance,
                write: true,
            };
            let outcome = run_experiment(&exp, &opts)?;
            for (p, r) in outcome.trace_paths.iter().zip(&outcome.runs) {
                println!("{} {}", r.trace.checksum()?, p.display());
            }
            if outcome.verified {
                println!("verified: engine matches reference decoder");
            }
        }
        Command::Verify { mode } => {
            let exp = load_experiment(cli)?;
            let opts = RunOptions {
                mode: *mode,
                out_dir: None,
                verify: true,
                tolerance: cli.verify_tolerance,
                write: false,
            };
            let outcome = run_experiment(&exp, &opts)?;
            println!("verified {} run(s): engine matches reference decoder", outcome.runs.len());
        }
        Command::Analyze {
            vanilla,
            clvs,
            scene,
            object,
            clip,
        } => {
            let v = read_trace(vanilla)?;
            let c = read_trace(clvs)?;
            let n_vis = v.header.layout.n_vis;
            let obj = match scene {
                Some(p) => {
                    let scene = Scene::load(p)?;
                    match object {
                        Some(name) => scene.object(name).ok_or_else(|| {
                            Error::Config(format!("--object: no object named {name:?} in scene"))
                        })?,
                        None => scene.overlaps().into_iter().next().ok_or_else(|| {
                            Error::Config("--scene: scene has no objects".into())
                        })?,
                    }
                }
                None if object.is_some() => {
                    return Err(Error::Config("--object: needs --scene".into()))
                }
                None => ObjectOverlap {
                    name: "whole_image".into(),
                    overlap: vec![1.0; n_vis],
                },
            };
            let report = build_report(&v, &c, &obj, *clip)?;
            let dir = out_dir(cli);
            report.write(&dir)?;
            println!("{}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Verification(_) => 3,
                _ => 1,
            })
        }
    }
}
