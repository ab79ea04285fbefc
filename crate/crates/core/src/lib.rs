// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cross-layer vision smoothing on a toy decoder-only transformer.
//!
//! * [`engine`]: f64 transformer with a KV cache, per-layer RoPE positions,
//!   attention hooks and a logit-lens probe.
//! * [`clvs`]: the smoothing intervention as pure functions plus a hook.
//! * [`trace`]: JSONL trace files.
//! * [`analysis`]: object attention, peak and convergence layers, and the
//!   uncertainty statistics.
//! * [`harness`]: seeded models and scenes, scripted attention, a reference
//!   decoder, and experiment configs.
//!
//! ```
//! use clvs::clvs::{ClvsConfig, ClvsSession};
//! use clvs::engine::{generate, Model, TokenLayout};
//! use clvs::harness::{gen_weights, GenDims};
//!
//! let model = Model::new(gen_weights(1, &GenDims::default())?)?;
//! let layout = TokenLayout::new(1, 4, 2)?;
//! let prompt = [3, 5, 6, 7, 8, 9, 10];
//! let positions = clvs::clvs::unified_positions(&layout);
//! let mut session = ClvsSession::new(ClvsConfig::default(), model.config().n_layers)?;
//! let out = generate(&model, &prompt, &layout, &positions, 4, Some(&mut session))?;
//! assert_eq!(out.tokens.len(), 4);
//! # Ok::<(), clvs::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod clvs;
pub mod engine;
pub mod error;
pub mod harness;
pub mod trace;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/engine.md")]
    mod engine {}
    #[doc = include_str!("../../../book/src/positions.md")]
    mod positions {}
    #[doc = include_str!("../../../book/src/smoothing.md")]
    mod smoothing {}
    #[doc = include_str!("../../../book/src/termination.md")]
    mod termination {}
    #[doc = include_str!("../../../book/src/traces.md")]
    mod traces {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
