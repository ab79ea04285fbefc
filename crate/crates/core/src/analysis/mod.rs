// SPDX-License-Identifier: MIT OR Apache-2.0

//! Mechanism-level measurements over traces: key-object attention per
//! layer, peak layers, relative increase of smoothed over vanilla attention,
//! convergence layers, and uncertainty/convergence statistics.

mod metrics;
mod report;
mod scene;
mod stats;

pub use metrics::{
    convergence_layer, key_object_attention, peak_layer, relative_increase, AttentionSeries,
    ConvergenceProfile,
};
pub use report::{
    build_report, step_series, trace_series, uncertainty_convergence_pairs, uncertainty_stats,
    used_visual_attention, LayerRow, Report, UncertaintyStats, DEFAULT_CLIP_PCT, REPORT_CSV,
    REPORT_JSON,
};
pub use scene::{box_overlap, ObjectOverlap, PatchGrid, Scene, SceneObject};
pub use stats::{logistic_fit, point_biserial, LogisticFit, LOGISTIC_MAX_ITER, LOGISTIC_TOLERANCE};
