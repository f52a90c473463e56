//! Curation engine for narrated surgical videos: transcripts become
//! hierarchical, filtered and enriched clip-caption manifests. Also carries
//! the contrastive objective and evaluation metrics at embedding level.

pub mod backend;
pub mod contrastive;
pub mod dataset;
pub mod enrichment;
pub mod eval;
pub mod filtering;
pub mod hierarchy;
pub mod pipeline;
pub mod transcript;
