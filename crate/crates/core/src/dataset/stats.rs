//! Dataset statistics as an associative map-reduce over manifest records.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::manifest::{parse_record, ManifestRecord};
use super::taxonomy::TaxonomyLabel;
use super::DatasetError;
use crate::filtering::{TextualLabel, VisualLabel};
use crate::hierarchy::GranularityLevel;
use crate::transcript::Millis;

#[derive(Debug, Clone, Default, PartialEq)]
struct LevelAcc {
    durations_ms: Vec<Millis>,
    clips_per_video: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RetentionCounts {
    pub total: usize,
    /// Records that carry no verdict yet.
    pub unfiltered: usize,
    pub visual_pass: usize,
    pub visual_fail: usize,
    pub textual_pass: usize,
    pub textual_fail: usize,
    /// Failed both filters.
    pub both_fail: usize,
    pub retained: usize,
    pub rejected: usize,
    pub enriched: usize,
    pub enrichment_failed: usize,
}

impl RetentionCounts {
    fn add(&mut self, r: &ManifestRecord) {
        self.total += 1;
        let visual_fail = r.visual_label == Some(VisualLabel::NonSurgical);
        let textual_fail = r.textual_label == Some(TextualLabel::NonDescriptive);
        self.visual_pass += usize::from(r.visual_label == Some(VisualLabel::Surgical));
        self.visual_fail += usize::from(visual_fail);
        self.textual_pass += usize::from(r.textual_label == Some(TextualLabel::Descriptive));
        self.textual_fail += usize::from(textual_fail);
        self.both_fail += usize::from(visual_fail && textual_fail);
        match r.retained {
            None => self.unfiltered += 1,
            Some(true) => self.retained += 1,
            Some(false) => self.rejected += 1,
        }
        self.enriched += usize::from(r.caption_enriched.is_some());
        self.enrichment_failed += usize::from(r.enrichment_failed);
    }

    fn merge(&mut self, o: &RetentionCounts) {
        self.total += o.total;
        self.unfiltered += o.unfiltered;
        self.visual_pass += o.visual_pass;
        self.visual_fail += o.visual_fail;
        self.textual_pass += o.textual_pass;
        self.textual_fail += o.textual_fail;
        self.both_fail += o.both_fail;
        self.retained += o.retained;
        self.rejected += o.rejected;
        self.enriched += o.enriched;
        self.enrichment_failed += o.enrichment_failed;
    }
}

/// Partial statistics over any subset of records. `merge` is associative
/// and commutative, so shards may be reduced in any order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StatsAccumulator {
    levels: BTreeMap<GranularityLevel, LevelAcc>,
    retention: RetentionCounts,
    taxonomy: BTreeMap<String, TaxonomyLabel>,
}

impl StatsAccumulator {
    pub fn add(&mut self, r: &ManifestRecord) {
        let acc = self.levels.entry(r.level).or_default();
        acc.durations_ms.push(r.duration_ms());
        *acc.clips_per_video.entry(r.video_id.clone()).or_default() += 1;
        self.retention.add(r);
        if let Some(t) = &r.taxonomy {
            self.put_taxonomy(&r.video_id, t);
        }
    }

    pub fn merge(mut self, other: StatsAccumulator) -> StatsAccumulator {
        for (level, acc) in other.levels {
            let mine = self.levels.entry(level).or_default();
            mine.durations_ms.extend(acc.durations_ms);
            for (vid, n) in acc.clips_per_video {
                *mine.clips_per_video.entry(vid).or_default() += n;
            }
        }
        self.retention.merge(&other.retention);
        for (vid, t) in &other.taxonomy {
            self.put_taxonomy(vid, t);
        }
        self
    }

    /// Keeps the smallest label per video so the result is independent of
    /// record and merge order.
    fn put_taxonomy(&mut self, video_id: &str, t: &TaxonomyLabel) {
        match self.taxonomy.get(video_id) {
            Some(existing) if label_key(existing) <= label_key(t) => {}
            _ => {
                self.taxonomy.insert(video_id.to_string(), t.clone());
            }
        }
    }

    pub fn finish(self) -> Result<StatsReport, DatasetError> {
        if self.retention.total == 0 {
            return Err(DatasetError::EmptyManifest);
        }
        let mut videos: Vec<&String> = self.levels.values().flat_map(|a| a.clips_per_video.keys()).collect();
        videos.sort();
        videos.dedup();
        let n_videos = videos.len();

        let levels = GranularityLevel::ALL
            .iter()
            .map(|&level| {
                let acc = self.levels.get(&level).cloned().unwrap_or_default();
                let mut per_video: Vec<usize> = videos
                    .iter()
                    .map(|v| acc.clips_per_video.get(*v).copied().unwrap_or(0))
                    .collect();
                per_video.sort_unstable();
                LevelStats::from_parts(level, acc.durations_ms, &per_video)
            })
            .collect();

        let mut specialty = BTreeMap::new();
        let mut subject = BTreeMap::new();
        let mut procedure = BTreeMap::new();
        for t in self.taxonomy.values() {
            *specialty.entry(t.specialty.clone()).or_insert(0) += 1;
            *subject.entry(t.subject.clone()).or_insert(0) += 1;
            *procedure.entry(t.procedure.clone()).or_insert(0) += 1;
        }
        Ok(StatsReport {
            videos: n_videos,
            levels,
            retention: self.retention,
            taxonomy: TaxonomyHistograms {
                videos_labeled: self.taxonomy.len(),
                unresolved: self.taxonomy.values().filter(|t| t.unresolved).count(),
                specialty,
                subject,
                procedure,
            },
        })
    }
}

fn label_key(t: &TaxonomyLabel) -> (&str, &str, &str, bool) {
    (&t.specialty, &t.subject, &t.procedure, t.unresolved)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
}

impl Summary {
    /// `sorted` must be ascending and non-empty.
    fn of_sorted(sorted: &[f64], sum: f64) -> Summary {
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Summary {
            min: sorted[0],
            max: sorted[n - 1],
            mean: sum / n as f64,
            median,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelStats {
    pub level: GranularityLevel,
    pub pairs: usize,
    pub total_duration_ms: u64,
    /// Clip duration in seconds; absent when the level has no pairs.
    pub duration_s: Option<Summary>,
    /// Clips per video, counting videos that have none at this level.
    pub clips_per_video: Option<Summary>,
}

impl LevelStats {
    fn from_parts(level: GranularityLevel, mut durations_ms: Vec<Millis>, per_video: &[usize]) -> Self {
        durations_ms.sort_unstable();
        let total: u64 = durations_ms.iter().sum();
        let duration_s = (!durations_ms.is_empty()).then(|| {
            let secs: Vec<f64> = durations_ms.iter().map(|&d| d as f64 / 1000.0).collect();
            Summary::of_sorted(&secs, total as f64 / 1000.0)
        });
        let clips_per_video = (!per_video.is_empty()).then(|| {
            let counts: Vec<f64> = per_video.iter().map(|&c| c as f64).collect();
            Summary::of_sorted(&counts, per_video.iter().sum::<usize>() as f64)
        });
        LevelStats {
            level,
            pairs: durations_ms.len(),
            total_duration_ms: total,
            duration_s,
            clips_per_video,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaxonomyHistograms {
    pub videos_labeled: usize,
    pub unresolved: usize,
    pub specialty: BTreeMap<String, usize>,
    pub subject: BTreeMap<String, usize>,
    pub procedure: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub videos: usize,
    /// Phase, step, task.
    pub levels: Vec<LevelStats>,
    pub retention: RetentionCounts,
    pub taxonomy: TaxonomyHistograms,
}

impl StatsReport {
    pub fn level(&self, level: GranularityLevel) -> &LevelStats {
        &self.levels[level.manifest_rank()]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "videos: {}", self.videos);
        let _ = writeln!(
            s,
            "{:<6} {:>8} {:>12} {:>12} {:>14}",
            "level", "pairs", "avg dur (s)", "median (s)", "clips/video"
        );
        for l in &self.levels {
            let (mean, median) = l
                .duration_s
                .map(|d| (format!("{:.2}", d.mean), format!("{:.2}", d.median)))
                .unwrap_or(("-".into(), "-".into()));
            let cpv = l
                .clips_per_video
                .map(|c| format!("{:.2}", c.mean))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<6} {:>8} {:>12} {:>12} {:>14}",
                l.level.as_str(),
                l.pairs,
                mean,
                median,
                cpv
            );
        }
        let r = &self.retention;
        let _ = writeln!(
            s,
            "retention: {} of {} retained ({} rejected, {} unfiltered)",
            r.retained, r.total, r.rejected, r.unfiltered
        );
        let _ = writeln!(
            s,
            "  visual   pass {:>6}  fail {:>6}\n  textual  pass {:>6}  fail {:>6}\n  both fail {:>5}",
            r.visual_pass, r.visual_fail, r.textual_pass, r.textual_fail, r.both_fail
        );
        let _ = writeln!(s, "  enriched {} (failed {})", r.enriched, r.enrichment_failed);
        if self.taxonomy.videos_labeled > 0 {
            let _ = writeln!(
                s,
                "taxonomy: {} videos labeled, {} unresolved",
                self.taxonomy.videos_labeled, self.taxonomy.unresolved
            );
            for (name, n) in &self.taxonomy.specialty {
                let _ = writeln!(s, "  {name:<32} {n:>6}");
            }
        }
        s
    }
}

pub fn compute_stats(records: &[ManifestRecord]) -> Result<StatsReport, DatasetError> {
    let mut acc = StatsAccumulator::default();
    for r in records {
        acc.add(r);
    }
    acc.finish()
}

/// Parses and aggregates manifest text in parallel chunks of lines.
pub fn stats_from_jsonl(text: &str) -> Result<StatsReport, DatasetError> {
    let lines: Vec<(usize, &str)> = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).collect();
    let acc = lines
        .par_chunks(1024)
        .map(|chunk| {
            let mut acc = StatsAccumulator::default();
            for &(i, l) in chunk {
                acc.add(&parse_record(l, i + 1)?);
            }
            Ok(acc)
        })
        .try_reduce(StatsAccumulator::default, |a, b| Ok(a.merge(b)))?;
    acc.finish()
}
