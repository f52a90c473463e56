//! Canonical per-video transcript built from ASR output.
//!
//! Sentence spans and word tokens carry integer millisecond timestamps. All
//! interval math downstream is integer, so the timestamps here are the only
//! timing truth the pipeline ever sees.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::protocol::{AsrDocument, AsrSegment, AsrWord};

/// Millisecond timestamp.
pub type Millis = u64;

/// Largest overlap between consecutive words that ingestion repairs instead
/// of rejecting.
pub const MAX_WORD_OVERLAP_MS: Millis = 50;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TranscriptError {
    #[error("transcription for video {0} has no sentences")]
    EmptyTranscription(String),
    #[error("malformed timestamps in video {video_id}: {detail}")]
    MalformedTimestamps { video_id: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordToken {
    pub text: String,
    pub t_start: Millis,
    pub t_end: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub text: String,
    pub t_start: Millis,
    pub t_end: Millis,
}

/// One video's sentence- and word-level transcription.
///
/// Constructed only through [`ingest_transcript`], which guarantees sorted,
/// non-overlapping words inside `[0, duration]` and at least one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub video_id: String,
    pub sentences: Vec<SentenceSpan>,
    pub words: Vec<WordToken>,
    pub duration: Millis,
}

impl Transcript {
    /// Re-serializes into the ASR wire schema. Feeding the result back to
    /// [`ingest_transcript`] yields the same transcript.
    pub fn to_asr_document(&self) -> AsrDocument {
        AsrDocument {
            duration_ms: Some(self.duration),
            segments: self
                .sentences
                .iter()
                .map(|s| AsrSegment {
                    text: s.text.clone(),
                    start_ms: s.t_start,
                    end_ms: s.t_end,
                })
                .collect(),
            word_segments: self
                .words
                .iter()
                .map(|w| AsrWord {
                    word: w.text.clone(),
                    start_ms: w.t_start,
                    end_ms: w.t_end,
                })
                .collect(),
        }
    }
}

/// Validates an ASR document and repairs the small timing defects forced
/// aligners produce.
///
/// Words are sorted by `(t_start, t_end)` and clamped to `video_duration`.
/// A later word overlapping its predecessor by at most
/// [`MAX_WORD_OVERLAP_MS`] has its start moved to the predecessor's end;
/// larger overlaps are rejected. Whitespace-only words and sentences are
/// discarded.
pub fn ingest_transcript(
    video_id: &str,
    doc: &AsrDocument,
    video_duration: Millis,
) -> Result<Transcript, TranscriptError> {
    let malformed = |detail: String| TranscriptError::MalformedTimestamps {
        video_id: video_id.to_string(),
        detail,
    };

    let mut sentences = Vec::with_capacity(doc.segments.len());
    for seg in &doc.segments {
        let text = seg.text.trim();
        if text.is_empty() {
            continue;
        }
        if seg.end_ms < seg.start_ms {
            return Err(malformed(format!(
                "sentence {:?} ends at {} before it starts at {}",
                text, seg.end_ms, seg.start_ms
            )));
        }
        sentences.push(SentenceSpan {
            text: text.to_string(),
            t_start: seg.start_ms.min(video_duration),
            t_end: seg.end_ms.min(video_duration),
        });
    }
    if sentences.is_empty() {
        return Err(TranscriptError::EmptyTranscription(video_id.to_string()));
    }
    sentences.sort_by_key(|s| (s.t_start, s.t_end));

    let mut words = Vec::with_capacity(doc.word_segments.len());
    for w in &doc.word_segments {
        let text = w.word.trim();
        if text.is_empty() {
            continue;
        }
        if w.end_ms < w.start_ms {
            return Err(malformed(format!(
                "word {:?} ends at {} before it starts at {}",
                text, w.end_ms, w.start_ms
            )));
        }
        words.push(WordToken {
            text: text.to_string(),
            t_start: w.start_ms.min(video_duration),
            t_end: w.end_ms.min(video_duration),
        });
    }
    words.sort_by_key(|w| (w.t_start, w.t_end));

    for i in 1..words.len() {
        let prev_end = words[i - 1].t_end;
        let cur = &mut words[i];
        if cur.t_start < prev_end {
            let overlap = prev_end - cur.t_start;
            if overlap > MAX_WORD_OVERLAP_MS {
                return Err(malformed(format!(
                    "word {:?} overlaps its predecessor by {overlap} ms",
                    cur.text
                )));
            }
            cur.t_start = prev_end;
            if cur.t_end < cur.t_start {
                return Err(malformed(format!(
                    "word {:?} is nested inside its predecessor",
                    cur.text
                )));
            }
        }
    }

    Ok(Transcript {
        video_id: video_id.to_string(),
        sentences,
        words,
        duration: video_duration,
    })
}
