//! The corpus file: one JSON object per line describing a source video.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::enrichment::{VideoMeta, VideoSource};
use crate::transcript::Millis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub video_id: String,
    /// Video file or media script, relative to the corpus file.
    pub media: PathBuf,
    pub duration_ms: Millis,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub procedure_type: String,
    pub fps: f64,
    pub source: VideoSource,
    /// Pre-computed ASR document; the ASR backend is asked when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
}

impl CorpusEntry {
    pub fn meta(&self) -> VideoMeta {
        VideoMeta {
            video_id: self.video_id.clone(),
            title: self.title.clone(),
            procedure_type: self.procedure_type.clone(),
            fps: self.fps,
            source: self.source,
        }
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Parses corpus lines, resolving relative paths against `base`. Entries
/// come back sorted by video id.
pub fn parse_corpus(text: &str, base: &Path) -> Result<Vec<CorpusEntry>, PipelineError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| PipelineError::Input(format!("corpus line {}: {msg}", i + 1));
        let mut e: CorpusEntry = serde_json::from_str(line).map_err(|err| bad(err.to_string()))?;
        if !valid_id(&e.video_id) {
            return Err(bad(format!("video_id {:?} must be [A-Za-z0-9._-]+", e.video_id)));
        }
        if !seen.insert(e.video_id.clone()) {
            return Err(bad(format!("duplicate video_id {:?}", e.video_id)));
        }
        if e.duration_ms == 0 || !(e.fps.is_finite() && e.fps > 0.0) {
            return Err(bad("duration_ms and fps must be positive".into()));
        }
        e.media = base.join(&e.media);
        e.transcript = e.transcript.map(|t| base.join(t));
        out.push(e);
    }
    out.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusEntry>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = parse_corpus(&text, base)?;
    if entries.is_empty() {
        return Err(PipelineError::Input(format!("{}: corpus is empty", path.display())));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE_B: &str = r#"{"video_id":"b","media":"m/b.json","duration_ms":1000,"fps":25,"source":"public"}"#;
    const LINE_A: &str = r#"{"video_id":"a","media":"/abs/a.mp4","duration_ms":1000,"fps":30,"source":"private","transcript":"t/a.json","title":"T"}"#;

    #[test]
    fn entries_are_sorted_and_resolved() {
        let text = format!("{LINE_B}\n\n{LINE_A}\n");
        let entries = parse_corpus(&text, Path::new("/data")).unwrap();
        assert_eq!(entries[0].video_id, "a");
        assert_eq!(entries[0].media, PathBuf::from("/abs/a.mp4"));
        assert_eq!(entries[0].transcript.as_deref(), Some(Path::new("/data/t/a.json")));
        assert_eq!(entries[1].media, PathBuf::from("/data/m/b.json"));
        assert_eq!(entries[1].meta().source, VideoSource::Public);
    }

    #[test]
    fn bad_entries_are_input_errors() {
        let dup = format!("{LINE_B}\n{LINE_B}");
        let unsafe_id = LINE_B.replace("\"b\"", "\"../x\"");
        let zero = LINE_B.replace("1000", "0");
        let extra = LINE_B.replace("}", ",\"x\":1}");
        for text in [dup, unsafe_id, zero, extra, "{".to_string()] {
            assert!(
                matches!(parse_corpus(&text, Path::new(".")), Err(PipelineError::Input(_))),
                "{text}"
            );
        }
    }
}
