//! Phase/step/task segmentation of a transcript and alignment of segments
//! to clip-caption pairs.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::protocol::{
    AsrSegment, HierarchyProposal, ProposedSegment, RequestPayload, ResponseResult, SegmentationRequest,
};
use crate::backend::{BackendClient, BackendError};
use crate::transcript::{Millis, Transcript};

/// Surgical workflow granularity. Ordered by coarseness:
/// `Task < Step < Phase`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GranularityLevel {
    Task,
    Step,
    Phase,
}

impl GranularityLevel {
    /// Coarse to fine, the order levels appear in manifests.
    pub const ALL: [GranularityLevel; 3] = [GranularityLevel::Phase, GranularityLevel::Step, GranularityLevel::Task];

    pub fn as_str(self) -> &'static str {
        match self {
            GranularityLevel::Phase => "phase",
            GranularityLevel::Step => "step",
            GranularityLevel::Task => "task",
        }
    }

    /// Position in [`GranularityLevel::ALL`].
    pub fn manifest_rank(self) -> usize {
        match self {
            GranularityLevel::Phase => 0,
            GranularityLevel::Step => 1,
            GranularityLevel::Task => 2,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s)
    }
}

impl fmt::Display for GranularityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("segmenter backend failed: {0}")]
    BackendFailure(BackendError),
    #[error("segmenter output is unparseable: {0}")]
    UnparseableProposal(String),
    #[error("no {0} segments survive repair")]
    EmptyLevel(GranularityLevel),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub level: GranularityLevel,
    pub index: usize,
    pub t_start: Millis,
    pub t_end: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

impl Segment {
    fn overlap(&self, other: &Segment) -> Millis {
        self.t_end
            .min(other.t_end)
            .saturating_sub(self.t_start.max(other.t_start))
    }

    pub fn contains(&self, other: &Segment) -> bool {
        self.t_start <= other.t_start && other.t_end <= self.t_end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchySegmentation {
    pub phases: Vec<Segment>,
    pub steps: Vec<Segment>,
    pub tasks: Vec<Segment>,
}

impl HierarchySegmentation {
    pub fn level(&self, level: GranularityLevel) -> &[Segment] {
        match level {
            GranularityLevel::Phase => &self.phases,
            GranularityLevel::Step => &self.steps,
            GranularityLevel::Task => &self.tasks,
        }
    }

    /// Index of the segment in `parents` that contains `child`.
    fn enclosing(parents: &[Segment], child: &Segment) -> Option<usize> {
        // parents are sorted and disjoint: the candidate is the last one
        // starting at or before the child.
        let i = parents.partition_point(|p| p.t_start <= child.t_start);
        (i > 0 && parents[i - 1].contains(child)).then(|| i - 1)
    }

    pub fn step_of(&self, seg: &Segment) -> Option<usize> {
        Self::enclosing(&self.steps, seg)
    }

    pub fn phase_of(&self, seg: &Segment) -> Option<usize> {
        Self::enclosing(&self.phases, seg)
    }

    /// Indices of tasks lying inside `parent`.
    pub fn tasks_within(&self, parent: &Segment) -> Vec<usize> {
        self.tasks
            .iter()
            .enumerate()
            .filter(|(_, t)| parent.contains(t))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn from_proposal(p: &HierarchyProposal) -> Self {
        let conv = |level, v: &[ProposedSegment]| {
            v.iter()
                .enumerate()
                .map(|(index, s)| Segment {
                    level,
                    index,
                    t_start: s.start_ms,
                    t_end: s.end_ms,
                    topic: s.topic.clone(),
                })
                .collect()
        };
        HierarchySegmentation {
            phases: conv(GranularityLevel::Phase, &p.phases),
            steps: conv(GranularityLevel::Step, &p.steps),
            tasks: conv(GranularityLevel::Task, &p.tasks),
        }
    }
}

/// Counts of repairs applied by [`validate_hierarchy`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairReport {
    pub clamped: usize,
    pub trimmed: usize,
    pub dropped: usize,
    pub snapped: usize,
    pub synthesized: usize,
}

impl RepairReport {
    pub fn is_clean(&self) -> bool {
        *self == RepairReport::default()
    }
}

fn repair_level(mut segs: Vec<Segment>, duration: Millis, report: &mut RepairReport) -> Vec<Segment> {
    for s in &mut segs {
        if s.t_end > duration || s.t_start > duration {
            s.t_start = s.t_start.min(duration);
            s.t_end = s.t_end.min(duration);
            report.clamped += 1;
        }
    }
    segs.sort_by_key(|s| (s.t_start, s.t_end));
    let mut out: Vec<Segment> = Vec::with_capacity(segs.len());
    for mut s in segs {
        if let Some(prev) = out.last() {
            if s.t_start < prev.t_end {
                s.t_start = prev.t_end;
                report.trimmed += 1;
            }
        }
        if s.t_start >= s.t_end {
            report.dropped += 1;
            continue;
        }
        out.push(s);
    }
    out
}

/// Clamps every child into the parent it overlaps most (first on ties).
/// Children overlapping no parent are dropped.
fn nest(children: Vec<Segment>, parents: &[Segment], report: &mut RepairReport) -> Vec<Segment> {
    let mut out = Vec::with_capacity(children.len());
    for mut c in children {
        let best =
            parents
                .iter()
                .map(|p| c.overlap(p))
                .enumerate()
                .fold(None, |best: Option<(usize, Millis)>, (i, ov)| match best {
                    Some((_, b)) if b >= ov => best,
                    _ if ov > 0 => Some((i, ov)),
                    _ => best,
                });
        let Some((pi, _)) = best else {
            report.dropped += 1;
            continue;
        };
        let p = &parents[pi];
        if !p.contains(&c) {
            c.t_start = c.t_start.max(p.t_start);
            c.t_end = c.t_end.min(p.t_end);
            report.snapped += 1;
        }
        out.push(c);
    }
    out.sort_by_key(|s| (s.t_start, s.t_end));
    out
}

/// Gives every childless parent one child spanning it.
fn fill_childless(
    children: &mut Vec<Segment>,
    parents: &[Segment],
    level: GranularityLevel,
    report: &mut RepairReport,
) {
    let mut added = Vec::new();
    for p in parents {
        if !children.iter().any(|c| p.contains(c)) {
            added.push(Segment {
                level,
                index: 0,
                t_start: p.t_start,
                t_end: p.t_end,
                topic: p.topic.clone(),
            });
        }
    }
    if !added.is_empty() {
        report.synthesized += added.len();
        children.extend(added);
        children.sort_by_key(|s| (s.t_start, s.t_end));
    }
}

fn reindex(segs: &mut [Segment], level: GranularityLevel) {
    for (i, s) in segs.iter_mut().enumerate() {
        s.index = i;
        s.level = level;
    }
}

/// Repairs a proposed segmentation so that every level is sorted and
/// disjoint, spans lie in `[0, duration]`, and steps nest in phases and
/// tasks in steps.
///
/// Within a level, a segment overlapping its predecessor has its start moved
/// to the predecessor's end and is dropped if that empties it. A child that
/// escapes its parent is clamped into the parent it overlaps most. A parent
/// left without children gets one child covering its whole span. The
/// function is idempotent.
pub fn validate_hierarchy(
    proposal: HierarchySegmentation,
    transcript: &Transcript,
) -> Result<(HierarchySegmentation, RepairReport), HierarchyError> {
    let duration = transcript.duration;
    let mut report = RepairReport::default();
    let HierarchySegmentation { phases, steps, tasks } = proposal;

    let mut phases = repair_level(phases, duration, &mut report);
    if phases.is_empty() {
        return Err(HierarchyError::EmptyLevel(GranularityLevel::Phase));
    }
    reindex(&mut phases, GranularityLevel::Phase);

    let steps = repair_level(steps, duration, &mut report);
    let mut steps = nest(steps, &phases, &mut report);
    if steps.is_empty() {
        return Err(HierarchyError::EmptyLevel(GranularityLevel::Step));
    }
    fill_childless(&mut steps, &phases, GranularityLevel::Step, &mut report);
    reindex(&mut steps, GranularityLevel::Step);

    let tasks = repair_level(tasks, duration, &mut report);
    let mut tasks = nest(tasks, &steps, &mut report);
    if tasks.is_empty() {
        return Err(HierarchyError::EmptyLevel(GranularityLevel::Task));
    }
    fill_childless(&mut tasks, &steps, GranularityLevel::Task, &mut report);
    reindex(&mut tasks, GranularityLevel::Task);

    Ok((HierarchySegmentation { phases, steps, tasks }, report))
}

/// Asks the segmenter backend for a hierarchy (one call per video) and
/// validates it.
pub fn segment_transcript(
    transcript: &Transcript,
    client: &BackendClient,
    prompt: &str,
) -> Result<(HierarchySegmentation, RepairReport), HierarchyError> {
    let req = SegmentationRequest {
        video_id: transcript.video_id.clone(),
        duration_ms: transcript.duration,
        sentences: transcript
            .sentences
            .iter()
            .map(|s| AsrSegment {
                text: s.text.clone(),
                start_ms: s.t_start,
                end_ms: s.t_end,
            })
            .collect(),
        prompt: prompt.to_string(),
    };
    let proposal = match client.request(RequestPayload::SegHierarchy(req)) {
        Ok(ResponseResult::Hierarchy(p)) => p,
        Ok(_) => unreachable!("validated result kind"),
        Err(BackendError::SchemaViolation(msg)) => return Err(HierarchyError::UnparseableProposal(msg)),
        Err(e) => return Err(HierarchyError::BackendFailure(e)),
    };
    for (level, list) in [
        (GranularityLevel::Phase, &proposal.phases),
        (GranularityLevel::Step, &proposal.steps),
        (GranularityLevel::Task, &proposal.tasks),
    ] {
        if list.is_empty() {
            return Err(HierarchyError::EmptyLevel(level));
        }
    }
    validate_hierarchy(HierarchySegmentation::from_proposal(&proposal), transcript)
}

/// Segmentation used when multi-level captioning is switched off: one task
/// per sentence under a single step and phase covering the narration.
pub fn sentence_hierarchy(transcript: &Transcript) -> Result<(HierarchySegmentation, RepairReport), HierarchyError> {
    let tasks: Vec<Segment> = transcript
        .sentences
        .iter()
        .enumerate()
        .map(|(index, s)| Segment {
            level: GranularityLevel::Task,
            index,
            t_start: s.t_start,
            t_end: s.t_end,
            topic: None,
        })
        .collect();
    let start = transcript.sentences.iter().map(|s| s.t_start).min().unwrap_or(0);
    let end = transcript.sentences.iter().map(|s| s.t_end).max().unwrap_or(0);
    let whole = |level| Segment {
        level,
        index: 0,
        t_start: start,
        t_end: end,
        topic: None,
    };
    validate_hierarchy(
        HierarchySegmentation {
            phases: vec![whole(GranularityLevel::Phase)],
            steps: vec![whole(GranularityLevel::Step)],
            tasks,
        },
        transcript,
    )
}

/// One clip and the narration fully contained in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipCaptionPair {
    pub video_id: String,
    pub level: GranularityLevel,
    /// Index of the source segment within its level.
    pub clip_index: usize,
    pub t_start: Millis,
    pub t_end: Millis,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_phase: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Alignment {
    pub pairs: Vec<ClipCaptionPair>,
    /// Segments that contained no whole word.
    pub dropped_empty: usize,
}

/// Builds one pair per segment at `level`. The caption is the space-joined
/// text of every word `w` with `seg.t_start <= w.t_start` and
/// `w.t_end <= seg.t_end`, in transcript order. Segments capturing no word
/// are dropped and counted.
pub fn align_segments(
    transcript: &Transcript,
    hierarchy: &HierarchySegmentation,
    level: GranularityLevel,
) -> Alignment {
    let words = &transcript.words;
    let mut out = Alignment::default();
    for seg in hierarchy.level(level) {
        let first = words.partition_point(|w| w.t_start < seg.t_start);
        let caption = words[first..]
            .iter()
            .take_while(|w| w.t_start <= seg.t_end)
            .filter(|w| w.t_end <= seg.t_end)
            .map(|w| w.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        if caption.is_empty() {
            out.dropped_empty += 1;
            continue;
        }
        let (parent_step, parent_phase) = match level {
            GranularityLevel::Phase => (None, None),
            GranularityLevel::Step => (None, hierarchy.phase_of(seg)),
            GranularityLevel::Task => (hierarchy.step_of(seg), hierarchy.phase_of(seg)),
        };
        out.pairs.push(ClipCaptionPair {
            video_id: transcript.video_id.clone(),
            level,
            clip_index: seg.index,
            t_start: seg.t_start,
            t_end: seg.t_end,
            caption,
            parent_step,
            parent_phase,
        });
    }
    out
}
