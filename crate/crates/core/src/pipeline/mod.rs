//! Per-video orchestration of the curation stages over a work directory.
//!
//! Each video moves through ingest, segment, align, filter and enrich;
//! taxonomy needs only the aligned pairs. Every completed (video, stage) is
//! recorded in a checkpoint ledger so that re-running a command skips
//! finished work.

pub mod config;
pub mod corpus;
pub mod prompts;
pub mod runner;
pub mod workdir;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{BackendSettings, FilterSettings, PipelineConfig, StageToggles};
pub use corpus::{load_corpus, CorpusEntry};
pub use prompts::PromptSet;
pub use runner::{downstream, RunReport, Runner, StageSummary};
pub use workdir::{Checkpoint, CheckpointStatus, WorkDir};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Segment,
    Align,
    Filter,
    Enrich,
    Taxonomy,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Segment,
        Stage::Align,
        Stage::Filter,
        Stage::Enrich,
        Stage::Taxonomy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Segment => "segment",
            Stage::Align => "align",
            Stage::Filter => "filter",
            Stage::Enrich => "enrich",
            Stage::Taxonomy => "taxonomy",
        }
    }

    /// The stage whose output this stage consumes.
    pub fn requires(self) -> Option<Stage> {
        match self {
            Stage::Ingest => None,
            Stage::Segment => Some(Stage::Ingest),
            Stage::Align => Some(Stage::Segment),
            Stage::Filter => Some(Stage::Align),
            Stage::Enrich => Some(Stage::Filter),
            Stage::Taxonomy => Some(Stage::Align),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("{stage} cannot run for video {video_id}: {missing} has not completed")]
    Precondition {
        video_id: String,
        stage: Stage,
        missing: Stage,
    },
    #[error("backend failure in {stage} for video {video_id}: {message}")]
    Backend {
        video_id: String,
        stage: Stage,
        message: String,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl PipelineError {
    /// Process exit status: 2 config, 3 input, 4 backend, 5 invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Input(_) | PipelineError::Precondition { .. } => 3,
            PipelineError::Backend { .. } => 4,
            PipelineError::Invariant(_) => 5,
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: impl fmt::Display) -> Self {
        PipelineError::Input(format!("{}: {e}", path.display()))
    }
}
