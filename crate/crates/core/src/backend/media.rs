//! Frame extraction: `(media, timestamp) -> image bytes`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::protocol::AsrDocument;
use crate::transcript::Millis;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MediaError {
    #[error("cannot read media {path}: {message}")]
    Unreadable { path: String, message: String },
    #[error("no decodable frame in {path} at {t_ms} ms")]
    NoFrame { path: String, t_ms: Millis },
}

pub trait MediaDecoder: Send + Sync {
    fn frame(&self, media: &Path, t_ms: Millis) -> Result<Vec<u8>, MediaError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub start_ms: Millis,
    pub end_ms: Millis,
    pub description: String,
}

/// A synthetic "video": timed scene descriptions standing in for pixels,
/// plus optional narration that the mock ASR endpoint returns verbatim.
///
/// Frames are the UTF-8 bytes of the description of the scene covering the
/// requested timestamp (`start_ms <= t < end_ms`). Timestamps that fall in a
/// gap between scenes fail to decode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaScript {
    pub duration_ms: Millis,
    pub scenes: Vec<Scene>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narration: Option<AsrDocument>,
}

impl MediaScript {
    pub fn load(path: &Path) -> Result<Self, MediaError> {
        let unreadable = |message: String| MediaError::Unreadable {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| unreadable(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| unreadable(e.to_string()))
    }

    pub fn scene_at(&self, t_ms: Millis) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.start_ms <= t_ms && t_ms < s.end_ms)
    }

    /// Whether `path` names a media script rather than an encoded video.
    pub fn is_script_path(path: &Path) -> bool {
        path.extension().is_some_and(|e| e == "json")
    }
}

#[derive(Default)]
pub struct ScriptedDecoder {
    cache: Mutex<HashMap<PathBuf, Arc<MediaScript>>>,
}

impl ScriptedDecoder {
    pub fn script(&self, media: &Path) -> Result<Arc<MediaScript>, MediaError> {
        if let Some(s) = self.cache.lock().unwrap().get(media) {
            return Ok(s.clone());
        }
        let script = Arc::new(MediaScript::load(media)?);
        self.cache.lock().unwrap().insert(media.to_path_buf(), script.clone());
        Ok(script)
    }
}

impl MediaDecoder for ScriptedDecoder {
    fn frame(&self, media: &Path, t_ms: Millis) -> Result<Vec<u8>, MediaError> {
        let script = self.script(media)?;
        script
            .scene_at(t_ms)
            .map(|s| s.description.as_bytes().to_vec())
            .ok_or_else(|| MediaError::NoFrame {
                path: media.display().to_string(),
                t_ms,
            })
    }
}

/// Grabs a single JPEG frame by seeking with an external `ffmpeg` binary.
pub struct FfmpegDecoder {
    program: String,
}

impl FfmpegDecoder {
    pub fn new(program: impl Into<String>) -> Self {
        FfmpegDecoder {
            program: program.into(),
        }
    }
}

impl MediaDecoder for FfmpegDecoder {
    fn frame(&self, media: &Path, t_ms: Millis) -> Result<Vec<u8>, MediaError> {
        let seek = format!("{}.{:03}", t_ms / 1000, t_ms % 1000);
        let out = Command::new(&self.program)
            .args(["-v", "error", "-ss", &seek, "-i"])
            .arg(media)
            .args(["-frames:v", "1", "-f", "image2pipe", "-vcodec", "mjpeg", "-"])
            .output()
            .map_err(|e| MediaError::Unreadable {
                path: media.display().to_string(),
                message: e.to_string(),
            })?;
        if !out.status.success() || out.stdout.is_empty() {
            return Err(MediaError::NoFrame {
                path: media.display().to_string(),
                t_ms,
            });
        }
        Ok(out.stdout)
    }
}

/// Dispatches by extension: `.json` media scripts go to the scripted
/// decoder, everything else to ffmpeg.
pub struct AutoDecoder {
    scripted: ScriptedDecoder,
    ffmpeg: FfmpegDecoder,
}

impl AutoDecoder {
    pub fn new(ffmpeg: impl Into<String>) -> Self {
        AutoDecoder {
            scripted: ScriptedDecoder::default(),
            ffmpeg: FfmpegDecoder::new(ffmpeg),
        }
    }
}

impl Default for AutoDecoder {
    fn default() -> Self {
        AutoDecoder::new("ffmpeg")
    }
}

impl MediaDecoder for AutoDecoder {
    fn frame(&self, media: &Path, t_ms: Millis) -> Result<Vec<u8>, MediaError> {
        if MediaScript::is_script_path(media) {
            self.scripted.frame(media, t_ms)
        } else {
            self.ffmpeg.frame(media, t_ms)
        }
    }
}
