//! Adam, learning-rate schedules, the coarse and fine stages, and the edit
//! and tracking pipelines built on them.

mod adam;
mod config;
mod pipeline;
mod record;
mod stages;

pub use adam::{adam_step, cosine_lr, renormalize_quats, AdamState};
pub use config::{CoarseConfig, EditConfig, FineConfig, FineMode};
pub use pipeline::{run_edit, run_track, EditOutcome, EditReport, TrackFrame, ViewMetrics};
pub use record::{to_jsonl, LogRecord, LossBreakdown, LossWeights, Stage};
pub use stages::{
    anchor_graph, coarse_stage, color_regularizer, fine_stage, gaussian_graph, scale_regularizer,
    CoarseOutcome, FineOutcome, Target,
};
