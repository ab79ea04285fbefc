// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic inputs, scripted attention, the reference decoder and the
//! experiment pipeline.

pub mod experiment;
pub mod oracle;
pub mod scripted;
pub mod synth;

pub use experiment::{
    compare_with_oracle, max_abs_diff, run_experiment, trace_file_name, DecaySpec, EngineRun,
    Experiment, ExperimentConfig, GenerateSpec, Mode, ModelSource, OutputSpec, RunOptions,
    RunOutcome, ScriptSpec, DEFAULT_VERIFY_TOLERANCE,
};
pub use oracle::{oracle_forward, OracleRun};
pub use scripted::{ScriptedHook, ScriptedSchedule, BACKGROUND_MASS};
pub use synth::{gen_model, gen_prompt, gen_scene, gen_weights, GenDims, Uniform};
