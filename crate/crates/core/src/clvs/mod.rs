// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cross-layer vision smoothing.
//!
//! Layer 1 sees every visual token at one shared position index, and its
//! visual attention seeds a vision memory. From layer 2 on, each head's
//! visual attention is blended with that memory, the row is renormalized,
//! and the memory absorbs the layer's raw attention. Once the logit-lens
//! uncertainty of a layer at or past the gate drops below `delta`, the
//! remaining layers of that step run unmodified.

mod ops;
mod session;

pub use ops::{
    head_max, init_memory, renormalize, smooth, uncertainty, unified_positions, update_memory,
    VisionMemory,
};
pub use session::{default_gate_start, ClvsConfig, ClvsSession, ClvsSessionState, LayerLog};
