//! Zero-shot recognition over frozen frame features, recognition metrics
//! and a linear probe.

pub mod metrics;
pub mod probe;
pub mod records;
pub mod zero_shot;

use thiserror::Error;

pub use metrics::{
    average_precision, map_over_classes, videowise_accuracy_f1, MapReport, MetricsReport, VideoMetrics, VideoSequence,
    VideowiseReport,
};
pub use probe::{linear_probe, train_probe, LinearProbe, ProbeConfig, ProbeOutcome};
pub use records::{evaluate_records, GroundTruthRecord, PredictionRecord};
pub use zero_shot::{argmax_first, window_embedding, zero_shot_classify, FrameFeatureTrack, ZeroShot};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("feature track is empty")]
    EmptyTrack,
    #[error("frame {frame} has dimension {got}, expected {expected}")]
    RaggedTrack { frame: usize, expected: usize, got: usize },
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("center {center} is outside a track of {len} frames")]
    CenterOutOfRange { center: usize, len: usize },
    #[error("pooled window embedding has zero norm")]
    ZeroVector,
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("no video to evaluate")]
    NoVideos,
    #[error("no class has a positive label")]
    NoPositives,
    #[error("label {label} is outside {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("probe loss became non-finite at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("invalid probe configuration: {0}")]
    InvalidConfig(String),
}
