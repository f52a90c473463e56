//! On-disk layout of a run and its checkpoint ledger.
//!
//! ```text
//! <work>/run.json              settings the artifacts were produced with
//! <work>/checkpoints.jsonl     one line per completed (video, stage)
//! <work>/manifest.jsonl        assembled output
//! <work>/videos/<id>/...       per-video stage artifacts
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{PipelineError, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointStatus {
    Done,
    /// The video was dropped at this stage; later stages skip it.
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub video_id: String,
    pub stage: Stage,
    pub status: CheckpointStatus,
}

struct Ledger {
    file: File,
    entries: BTreeMap<(String, Stage), CheckpointStatus>,
}

pub struct WorkDir {
    root: PathBuf,
    ledger: Mutex<Ledger>,
}

/// Writes through a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| PipelineError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

fn read_ledger(path: &Path) -> Result<BTreeMap<(String, Stage), CheckpointStatus>, PipelineError> {
    let mut entries = BTreeMap::new();
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(entries),
        Err(e) => return Err(PipelineError::io(path, e)),
    };
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Checkpoint>(line) {
            Ok(c) => {
                entries.insert((c.video_id, c.stage), c.status);
            }
            // an interrupted append leaves a torn final line
            Err(_) if i + 1 == lines.len() && !complete => {}
            Err(e) => {
                return Err(PipelineError::Invariant(format!(
                    "{} line {}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(entries)
}

impl WorkDir {
    pub fn open(root: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(root.join("videos")).map_err(|e| PipelineError::io(root, e))?;
        let path = root.join("checkpoints.jsonl");
        let entries = read_ledger(&path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| PipelineError::io(&path, e))?;
        // cut a torn final line so the next append starts on a fresh line
        let bytes = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
        if !bytes.is_empty() && !bytes.ends_with(b"\n") {
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            file.set_len(keep as u64).map_err(|e| PipelineError::io(&path, e))?;
        }
        Ok(WorkDir {
            root: root.to_path_buf(),
            ledger: Mutex::new(Ledger { file, entries }),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }

    pub fn video_dir(&self, video_id: &str) -> Result<PathBuf, PipelineError> {
        let dir = self.root.join("videos").join(video_id);
        fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        Ok(dir)
    }

    pub fn status(&self, video_id: &str, stage: Stage) -> Option<CheckpointStatus> {
        let ledger = self.ledger.lock().unwrap();
        ledger.entries.get(&(video_id.to_string(), stage)).copied()
    }

    pub fn is_done(&self, video_id: &str, stage: Stage) -> bool {
        self.status(video_id, stage) == Some(CheckpointStatus::Done)
    }

    pub fn is_discarded(&self, video_id: &str) -> bool {
        let ledger = self.ledger.lock().unwrap();
        ledger
            .entries
            .iter()
            .any(|((v, _), s)| v == video_id && *s == CheckpointStatus::Discarded)
    }

    /// Appends one checkpoint. The ledger lock makes this the single writer.
    pub fn record(&self, video_id: &str, stage: Stage, status: CheckpointStatus) -> Result<(), PipelineError> {
        let entry = Checkpoint {
            video_id: video_id.to_string(),
            stage,
            status,
        };
        let mut line = serde_json::to_string(&entry).expect("checkpoint serializes");
        line.push('\n');
        let mut ledger = self.ledger.lock().unwrap();
        let path = self.root.join("checkpoints.jsonl");
        ledger
            .file
            .write_all(line.as_bytes())
            .and_then(|_| ledger.file.sync_data())
            .map_err(|e| PipelineError::io(&path, e))?;
        ledger.entries.insert((entry.video_id, stage), status);
        Ok(())
    }

    fn settings_path(&self) -> PathBuf {
        self.root.join("run.json")
    }

    fn read_settings(&self) -> Result<BTreeMap<Stage, serde_json::Value>, PipelineError> {
        let path = self.settings_path();
        match fs::read_to_string(&path) {
            Ok(text) => {
                serde_json::from_str(&text).map_err(|e| PipelineError::Invariant(format!("{}: {e}", path.display())))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeMap::new()),
            Err(e) => Err(PipelineError::io(&path, e)),
        }
    }

    /// The settings `stage`'s artifacts were produced with, if recorded.
    pub fn stage_settings(&self, stage: Stage) -> Option<serde_json::Value> {
        let _guard = self.ledger.lock().unwrap();
        self.read_settings().ok()?.remove(&stage)
    }

    pub fn set_stage_settings(&self, stage: Stage, value: serde_json::Value) -> Result<(), PipelineError> {
        let _guard = self.ledger.lock().unwrap();
        let mut all = self.read_settings()?;
        all.insert(stage, value);
        write_json(&self.settings_path(), &all)
    }

    /// Drops every checkpoint and recorded setting of `stages`.
    pub fn reset(&self, stages: &[Stage]) -> Result<(), PipelineError> {
        let mut ledger = self.ledger.lock().unwrap();
        ledger.entries.retain(|(_, s), _| !stages.contains(s));
        let mut text = String::new();
        for ((video_id, stage), status) in &ledger.entries {
            let c = Checkpoint {
                video_id: video_id.clone(),
                stage: *stage,
                status: *status,
            };
            text.push_str(&serde_json::to_string(&c).expect("checkpoint serializes"));
            text.push('\n');
        }
        let path = self.root.join("checkpoints.jsonl");
        write_atomic(&path, text.as_bytes())?;
        ledger.file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| PipelineError::io(&path, e))?;
        let mut all = self.read_settings()?;
        all.retain(|s, _| !stages.contains(s));
        write_json(&self.settings_path(), &all)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Invariant(format!("{}: {e}", path.display())))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row).expect("artifact serializes"));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::Invariant(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let w = WorkDir::open(dir.path()).unwrap();
            assert!(!w.is_done("v1", Stage::Ingest));
            w.record("v1", Stage::Ingest, CheckpointStatus::Done).unwrap();
            w.record("v2", Stage::Ingest, CheckpointStatus::Discarded).unwrap();
        }
        let w = WorkDir::open(dir.path()).unwrap();
        assert!(w.is_done("v1", Stage::Ingest));
        assert!(!w.is_done("v1", Stage::Segment));
        assert!(w.is_discarded("v2") && !w.is_discarded("v1"));
    }

    #[test]
    fn torn_final_line_is_ignored_and_terminated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoints.jsonl");
        fs::write(
            &path,
            "{\"video_id\":\"a\",\"stage\":\"ingest\",\"status\":\"done\"}\n{\"video_",
        )
        .unwrap();
        let w = WorkDir::open(dir.path()).unwrap();
        assert!(w.is_done("a", Stage::Ingest));
        w.record("b", Stage::Ingest, CheckpointStatus::Done).unwrap();
        drop(w);
        let w = WorkDir::open(dir.path()).unwrap();
        assert!(w.is_done("b", Stage::Ingest));

        fs::write(
            &path,
            "garbage\n{\"video_id\":\"a\",\"stage\":\"ingest\",\"status\":\"done\"}\n",
        )
        .unwrap();
        assert!(matches!(WorkDir::open(dir.path()), Err(PipelineError::Invariant(_))));
    }

    #[test]
    fn reset_forgets_stages_and_settings() {
        let dir = tempfile::tempdir().unwrap();
        let w = WorkDir::open(dir.path()).unwrap();
        w.record("a", Stage::Ingest, CheckpointStatus::Done).unwrap();
        w.record("a", Stage::Segment, CheckpointStatus::Done).unwrap();
        w.set_stage_settings(Stage::Segment, serde_json::json!({"mlsc": true}))
            .unwrap();
        w.set_stage_settings(Stage::Ingest, serde_json::json!({"asr": "mock"}))
            .unwrap();
        assert_eq!(
            w.stage_settings(Stage::Segment),
            Some(serde_json::json!({"mlsc": true}))
        );
        w.reset(&[Stage::Segment]).unwrap();
        assert!(w.stage_settings(Stage::Segment).is_none());
        assert!(w.stage_settings(Stage::Ingest).is_some());
        w.record("a", Stage::Align, CheckpointStatus::Done).unwrap();
        drop(w);
        let w = WorkDir::open(dir.path()).unwrap();
        assert!(w.is_done("a", Stage::Ingest));
        assert!(!w.is_done("a", Stage::Segment));
        assert!(w.is_done("a", Stage::Align));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        write_jsonl(&path, &[1u32, 2, 3]).unwrap();
        assert_eq!(read_jsonl::<u32>(&path).unwrap(), vec![1, 2, 3]);
        assert!(!path.with_extension("tmp").exists());
    }
}
