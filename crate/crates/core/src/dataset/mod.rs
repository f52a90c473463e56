//! Manifest assembly, statistics and taxonomy classification.

pub mod manifest;
pub mod stats;
pub mod taxonomy;

use thiserror::Error;

use crate::backend::BackendError;
use crate::hierarchy::GranularityLevel;

pub use manifest::{
    assemble_manifest, parse_manifest, read_manifest, write_manifest, write_manifest_file, CaptionSource,
    ManifestRecord, PairKey, SCHEMA_VERSION,
};
pub use stats::{compute_stats, stats_from_jsonl, StatsAccumulator, StatsReport};
pub use taxonomy::{classify_taxonomy, transcript_summary, TaxonomyLabel, TaxonomyTree, UNKNOWN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("manifest line {line}: {detail}")]
    InvalidRecord { line: usize, detail: String },
    #[error("{video_id} {level} #{clip_index}: {detail}")]
    KeyMismatch {
        video_id: String,
        level: GranularityLevel,
        clip_index: usize,
        detail: String,
    },
    #[error("no metadata for video {0}")]
    MissingMeta(String),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),
    #[error("taxonomy backend failed: {0}")]
    BackendFailure(BackendError),
}
