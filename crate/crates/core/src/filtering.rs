//! Dual-modality filtering: frame-level surgical-content voting on task
//! clips, propagation of the visual label up the hierarchy, and caption
//! descriptiveness judging.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::media::MediaDecoder;
use crate::backend::protocol::{JudgeRequest, RequestPayload, ResponseResult};
use crate::backend::{BackendClient, BackendError};
use crate::hierarchy::HierarchySegmentation;
use crate::transcript::Millis;

pub const DEFAULT_FRAMES_PER_CLIP: usize = 24;
pub const DEFAULT_VOTE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VisualLabel {
    #[serde(rename = "surgical")]
    Surgical,
    #[serde(rename = "non-surgical")]
    NonSurgical,
}

impl fmt::Display for VisualLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VisualLabel::Surgical => "surgical",
            VisualLabel::NonSurgical => "non-surgical",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TextualLabel {
    #[serde(rename = "descriptive")]
    Descriptive,
    #[serde(rename = "non-descriptive")]
    NonDescriptive,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("invalid clip span [{t_start}, {t_end}) or frame count {n_frames}")]
    InvalidClip {
        t_start: Millis,
        t_end: Millis,
        n_frames: usize,
    },
    #[error("no prompts given for class {0:?}")]
    NoPrompts(String),
    #[error("averaged prompt embedding for class {0:?} vanishes")]
    ZeroVector(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("task {0} has no visual label")]
    MissingChildLabel(usize),
    #[error("caption is empty")]
    EmptyCaption,
    #[error("descriptiveness verdict is unparseable: {0}")]
    UnparseableVerdict(String),
    #[error("backend failure: {0}")]
    BackendFailure(BackendError),
}

/// Frame timestamps for one clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSamplePlan {
    pub t_start: Millis,
    pub t_end: Millis,
    pub n_frames: usize,
    pub timestamps: Vec<Millis>,
    /// The clip had fewer milliseconds than requested frames, so every
    /// millisecond is sampled once and `n_frames` was reduced.
    pub degenerate: bool,
}

impl FrameSamplePlan {
    /// Mean spacing between frames, in milliseconds.
    pub fn stride_ms(&self) -> f64 {
        (self.t_end - self.t_start) as f64 / self.n_frames as f64
    }
}

/// Center-of-bin sampling: frame `k` sits at
/// `t_start + floor((k + 0.5) * (t_end - t_start) / n)`.
pub fn plan_frame_samples(t_start: Millis, t_end: Millis, n_frames: usize) -> Result<FrameSamplePlan, FilterError> {
    if t_end <= t_start || n_frames == 0 {
        return Err(FilterError::InvalidClip {
            t_start,
            t_end,
            n_frames,
        });
    }
    let span = t_end - t_start;
    if span < n_frames as u64 {
        return Ok(FrameSamplePlan {
            t_start,
            t_end,
            n_frames: span as usize,
            timestamps: (t_start..t_end).collect(),
            degenerate: true,
        });
    }
    // floor((2k + 1) * span / (2n)) in exact integer arithmetic
    let n = n_frames as u128;
    let timestamps = (0..n)
        .map(|k| t_start + ((2 * k + 1) * span as u128 / (2 * n)) as u64)
        .collect();
    Ok(FrameSamplePlan {
        t_start,
        t_end,
        n_frames,
        timestamps,
        degenerate: false,
    })
}

/// A class represented by the re-normalized mean of its prompt embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEmbedding {
    pub name: String,
    pub vector: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    d / (norm(a) * norm(b))
}

/// Normalizes each vector, averages, and re-normalizes.
pub fn average_unit(name: &str, vectors: &[Vec<f64>]) -> Result<Vec<f64>, FilterError> {
    let Some(first) = vectors.first() else {
        return Err(FilterError::NoPrompts(name.into()));
    };
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        if v.len() != dim {
            return Err(FilterError::DimensionMismatch(dim, v.len()));
        }
        let n = norm(v);
        if n < 1e-12 {
            return Err(FilterError::ZeroVector(name.into()));
        }
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x / n);
    }
    acc.iter_mut().for_each(|a| *a /= vectors.len() as f64);
    let n = norm(&acc);
    if n < 1e-9 {
        return Err(FilterError::ZeroVector(name.into()));
    }
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

pub fn build_class_embedding(
    name: &str,
    prompts: &[String],
    client: &BackendClient,
) -> Result<ClassEmbedding, FilterError> {
    if prompts.is_empty() {
        return Err(FilterError::NoPrompts(name.into()));
    }
    let vectors = prompts
        .iter()
        .map(|p| client.embed_text(p).map_err(FilterError::BackendFailure))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ClassEmbedding {
        name: name.into(),
        vector: average_unit(name, &vectors)?,
    })
}

/// Index of the class with the highest cosine similarity; the earliest class
/// wins ties.
pub fn classify_frame(frame: &[f64], classes: &[ClassEmbedding]) -> Result<usize, FilterError> {
    if classes.len() < 2 {
        return Err(FilterError::TooFewClasses(classes.len()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in classes.iter().enumerate() {
        if c.vector.len() != frame.len() {
            return Err(FilterError::DimensionMismatch(frame.len(), c.vector.len()));
        }
        let s = cosine(frame, &c.vector);
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}

/// Surgical iff the surgical fraction of `labels` strictly exceeds
/// `threshold`.
pub fn vote_clip(labels: &[VisualLabel], threshold: f64) -> VisualLabel {
    if labels.is_empty() {
        return VisualLabel::NonSurgical;
    }
    let surgical = labels.iter().filter(|l| **l == VisualLabel::Surgical).count();
    if surgical as f64 / labels.len() as f64 > threshold {
        VisualLabel::Surgical
    } else {
        VisualLabel::NonSurgical
    }
}

/// Unanimous label if the children agree, else the strict majority, else
/// NonSurgical.
pub fn aggregate_children(children: &[VisualLabel]) -> VisualLabel {
    let surgical = children.iter().filter(|l| **l == VisualLabel::Surgical).count();
    let other = children.len() - surgical;
    if surgical > other {
        VisualLabel::Surgical
    } else {
        VisualLabel::NonSurgical
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagatedLabels {
    pub steps: Vec<VisualLabel>,
    pub phases: Vec<VisualLabel>,
}

/// Lifts task labels to steps and phases. Both parents aggregate over the
/// tasks they contain.
pub fn propagate_labels(
    task_labels: &[VisualLabel],
    hierarchy: &HierarchySegmentation,
) -> Result<PropagatedLabels, FilterError> {
    if task_labels.len() < hierarchy.tasks.len() {
        return Err(FilterError::MissingChildLabel(task_labels.len()));
    }
    let lift = |parent| -> Result<VisualLabel, FilterError> {
        let tasks = hierarchy.tasks_within(parent);
        if tasks.is_empty() {
            return Err(FilterError::MissingChildLabel(usize::MAX));
        }
        let labels: Vec<VisualLabel> = tasks.iter().map(|&i| task_labels[i]).collect();
        Ok(aggregate_children(&labels))
    };
    Ok(PropagatedLabels {
        steps: hierarchy.steps.iter().map(lift).collect::<Result<_, _>>()?,
        phases: hierarchy.phases.iter().map(lift).collect::<Result<_, _>>()?,
    })
}

/// How a task clip's frames become one visual label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipDecision {
    /// Classify each frame, then vote.
    #[default]
    MajorityVote,
    /// Classify the normalized mean of the frame embeddings once.
    MeanPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipVisual {
    pub label: VisualLabel,
    pub frames: usize,
    pub surgical_frames: usize,
    pub decode_failures: usize,
}

/// Visual classifier for task clips. `classes[surgical_index]` is the
/// surgical class; every other class counts as non-surgical.
pub struct VisualClassifier<'a> {
    pub client: &'a BackendClient,
    pub decoder: &'a dyn MediaDecoder,
    pub classes: &'a [ClassEmbedding],
    pub surgical_index: usize,
    pub n_frames: usize,
    pub threshold: f64,
    pub decision: ClipDecision,
}

impl VisualClassifier<'_> {
    fn frame_label(&self, vector: &[f64]) -> Result<VisualLabel, FilterError> {
        Ok(if classify_frame(vector, self.classes)? == self.surgical_index {
            VisualLabel::Surgical
        } else {
            VisualLabel::NonSurgical
        })
    }

    /// Frames that fail to decode count as non-surgical votes.
    pub fn classify_clip(&self, media: &Path, t_start: Millis, t_end: Millis) -> Result<ClipVisual, FilterError> {
        let plan = plan_frame_samples(t_start, t_end, self.n_frames)?;
        let mut labels = Vec::with_capacity(plan.n_frames);
        let mut vectors = Vec::with_capacity(plan.n_frames);
        let mut decode_failures = 0;
        for &t in &plan.timestamps {
            match self.decoder.frame(media, t) {
                Ok(bytes) => {
                    let v = self.client.embed_image(&bytes).map_err(FilterError::BackendFailure)?;
                    labels.push(self.frame_label(&v)?);
                    vectors.push(v);
                }
                Err(e) => {
                    log::debug!("frame decode failed: {e}");
                    decode_failures += 1;
                    labels.push(VisualLabel::NonSurgical);
                }
            }
        }
        let surgical_frames = labels.iter().filter(|l| **l == VisualLabel::Surgical).count();
        let label = match self.decision {
            ClipDecision::MajorityVote => vote_clip(&labels, self.threshold),
            ClipDecision::MeanPool if vectors.is_empty() => VisualLabel::NonSurgical,
            ClipDecision::MeanPool => match average_unit("clip", &vectors) {
                Ok(mean) => self.frame_label(&mean)?,
                Err(FilterError::ZeroVector(_)) => VisualLabel::NonSurgical,
                Err(e) => return Err(e),
            },
        };
        Ok(ClipVisual {
            label,
            frames: plan.n_frames,
            surgical_frames,
            decode_failures,
        })
    }
}

pub fn judge_descriptive(caption: &str, client: &BackendClient, prompt: &str) -> Result<TextualLabel, FilterError> {
    if caption.trim().is_empty() {
        return Err(FilterError::EmptyCaption);
    }
    let req = JudgeRequest {
        caption: caption.to_string(),
        prompt: prompt.to_string(),
    };
    match client.request(RequestPayload::TextJudge(req)) {
        Ok(ResponseResult::Judge(j)) => Ok(j.label),
        Ok(_) => unreachable!("validated result kind"),
        Err(BackendError::SchemaViolation(msg)) => Err(FilterError::UnparseableVerdict(msg)),
        Err(e) => Err(FilterError::BackendFailure(e)),
    }
}

/// Filter outcome for one pair. A `None` label means that filter was
/// switched off and counts as passing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub visual: Option<VisualLabel>,
    pub textual: Option<TextualLabel>,
    pub retained: bool,
}

impl FilterVerdict {
    pub fn new(visual: Option<VisualLabel>, textual: Option<TextualLabel>) -> Self {
        let retained =
            visual.is_none_or(|v| v == VisualLabel::Surgical) && textual.is_none_or(|t| t == TextualLabel::Descriptive);
        FilterVerdict {
            visual,
            textual,
            retained,
        }
    }
}

/// Retained iff surgical and descriptive.
pub fn apply_filter(visual: VisualLabel, textual: TextualLabel) -> FilterVerdict {
    FilterVerdict::new(Some(visual), Some(textual))
}
