//! The line-delimited manifest: one [`ManifestRecord`] per clip.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::taxonomy::TaxonomyLabel;
use super::DatasetError;
use crate::enrichment::{Enrichment, VideoMeta, VideoSource};
use crate::filtering::{FilterVerdict, TextualLabel, VisualLabel};
use crate::hierarchy::{ClipCaptionPair, GranularityLevel};
use crate::transcript::Millis;

pub const SCHEMA_VERSION: &str = "surgforge.manifest/1";

/// Which caption a consumer trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionSource {
    /// The enriched caption, falling back to the raw one.
    #[default]
    Enriched,
    Raw,
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// One manifest line. Keys are written in field declaration order and
/// absent optional fields are omitted, so equal records serialize to equal
/// bytes.
///
/// `visual_label`, `textual_label` and `retained` are absent before
/// filtering. After filtering `retained` is always present; a missing label
/// then means that filter was disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub schema_version: String,
    pub video_id: String,
    pub level: GranularityLevel,
    pub clip_index: usize,
    pub t_start_ms: Millis,
    pub t_end_ms: Millis,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_enriched: Option<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub enrichment_failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_label: Option<VisualLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub textual_label: Option<TextualLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retained: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_phase: Option<usize>,
    pub fps: f64,
    pub source: VideoSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<TaxonomyLabel>,
}

impl ManifestRecord {
    pub fn key(&self) -> PairKey {
        PairKey::new(&self.video_id, self.level, self.clip_index)
    }

    pub fn duration_ms(&self) -> Millis {
        self.t_end_ms - self.t_start_ms
    }

    pub fn is_filtered(&self) -> bool {
        self.retained.is_some()
    }

    /// The caption used for training under `source`.
    pub fn training_caption(&self, source: CaptionSource) -> &str {
        match source {
            CaptionSource::Enriched => self.caption_enriched.as_deref().unwrap_or(&self.caption),
            CaptionSource::Raw => &self.caption,
        }
    }

    pub fn verdict(&self) -> Option<FilterVerdict> {
        self.retained.map(|retained| FilterVerdict {
            visual: self.visual_label,
            textual: self.textual_label,
            retained,
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("unsupported schema_version {:?}", self.schema_version));
        }
        if self.t_start_ms >= self.t_end_ms {
            return Err(format!("empty span [{}, {}]", self.t_start_ms, self.t_end_ms));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(format!("fps must be positive, got {}", self.fps));
        }
        match self.retained {
            None if self.visual_label.is_some() || self.textual_label.is_some() => {
                return Err("labels present without a retained flag".into())
            }
            Some(r) if r != FilterVerdict::new(self.visual_label, self.textual_label).retained => {
                return Err("retained flag disagrees with labels".into())
            }
            _ => {}
        }
        if self.enrichment_failed && self.caption_enriched.is_some() {
            return Err("enrichment marked failed but caption_enriched is present".into());
        }
        if let Some(t) = &self.taxonomy {
            let unknown = t.specialty == super::UNKNOWN && t.subject == super::UNKNOWN && t.procedure == super::UNKNOWN;
            if t.unresolved != unknown {
                return Err("taxonomy must be a full path or the flagged unknown triple".into());
            }
        }
        Ok(())
    }
}

/// Identifies a clip across stage outputs. Ordered by video, then level
/// coarse to fine, then clip index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairKey {
    pub video_id: String,
    pub level: GranularityLevel,
    pub clip_index: usize,
}

impl PairKey {
    pub fn new(video_id: &str, level: GranularityLevel, clip_index: usize) -> Self {
        PairKey {
            video_id: video_id.to_string(),
            level,
            clip_index,
        }
    }

    pub fn of(pair: &ClipCaptionPair) -> Self {
        Self::new(&pair.video_id, pair.level, pair.clip_index)
    }
}

impl Ord for PairKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.video_id
            .cmp(&other.video_id)
            .then(self.level.manifest_rank().cmp(&other.level.manifest_rank()))
            .then(self.clip_index.cmp(&other.clip_index))
    }
}

impl PartialOrd for PairKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn mismatch(key: &PairKey, detail: &str) -> DatasetError {
    DatasetError::KeyMismatch {
        video_id: key.video_id.clone(),
        level: key.level,
        clip_index: key.clip_index,
        detail: detail.to_string(),
    }
}

/// Joins stage outputs into records sorted by [`PairKey`].
///
/// `verdicts` is `None` before filtering; otherwise every pair needs one.
/// Enrichments and verdicts must refer to existing pairs.
pub fn assemble_manifest(
    pairs: &[ClipCaptionPair],
    verdicts: Option<&BTreeMap<PairKey, FilterVerdict>>,
    enrichments: &BTreeMap<PairKey, Enrichment>,
    meta: &BTreeMap<String, VideoMeta>,
    taxonomy: &BTreeMap<String, TaxonomyLabel>,
) -> Result<Vec<ManifestRecord>, DatasetError> {
    let mut by_key: BTreeMap<PairKey, &ClipCaptionPair> = BTreeMap::new();
    for p in pairs {
        let key = PairKey::of(p);
        if by_key.insert(key.clone(), p).is_some() {
            return Err(mismatch(&key, "duplicate pair"));
        }
    }
    if let Some(v) = verdicts {
        if let Some(k) = v.keys().find(|k| !by_key.contains_key(*k)) {
            return Err(mismatch(k, "verdict without a pair"));
        }
    }
    if let Some(k) = enrichments.keys().find(|k| !by_key.contains_key(*k)) {
        return Err(mismatch(k, "enrichment without a pair"));
    }

    let mut out = Vec::with_capacity(by_key.len());
    for (key, pair) in by_key {
        let m = meta
            .get(&key.video_id)
            .ok_or_else(|| DatasetError::MissingMeta(key.video_id.clone()))?;
        let verdict = match verdicts {
            Some(v) => Some(*v.get(&key).ok_or_else(|| mismatch(&key, "pair lacks a verdict"))?),
            None => None,
        };
        let enrichment = enrichments.get(&key);
        out.push(ManifestRecord {
            schema_version: SCHEMA_VERSION.to_string(),
            video_id: pair.video_id.clone(),
            level: pair.level,
            clip_index: pair.clip_index,
            t_start_ms: pair.t_start,
            t_end_ms: pair.t_end,
            caption: pair.caption.clone(),
            caption_enriched: enrichment.and_then(|e| e.caption_enriched.clone()),
            enrichment_failed: enrichment.is_some_and(|e| e.failed),
            visual_label: verdict.and_then(|v| v.visual),
            textual_label: verdict.and_then(|v| v.textual),
            retained: verdict.map(|v| v.retained),
            parent_step: pair.parent_step,
            parent_phase: pair.parent_phase,
            fps: m.fps,
            source: m.source,
            taxonomy: taxonomy.get(&key.video_id).cloned(),
        });
    }
    Ok(out)
}

pub fn record_line(record: &ManifestRecord) -> String {
    serde_json::to_string(record).expect("manifest records serialize")
}

pub fn write_manifest<W: Write>(records: &[ManifestRecord], mut w: W) -> io::Result<()> {
    for r in records {
        w.write_all(record_line(r).as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial manifest.
pub fn write_manifest_file(records: &[ManifestRecord], path: &Path) -> Result<(), DatasetError> {
    let io_err = |e: io::Error| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let tmp = path.with_extension("jsonl.tmp");
    let file = std::fs::File::create(&tmp).map_err(io_err)?;
    write_manifest(records, io::BufWriter::new(file)).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)
}

/// Parses and validates one line; `line` is 1-based for error messages.
pub fn parse_record(text: &str, line: usize) -> Result<ManifestRecord, DatasetError> {
    let r: ManifestRecord = serde_json::from_str(text).map_err(|e| DatasetError::Parse {
        line,
        message: e.to_string(),
    })?;
    r.validate()
        .map_err(|detail| DatasetError::InvalidRecord { line, detail })?;
    Ok(r)
}

/// Parses a whole manifest. Blank lines are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_record(l, i + 1))
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_manifest(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::UNKNOWN;
    use proptest::prelude::*;
    use GranularityLevel::*;

    fn pair(video: &str, level: GranularityLevel, i: usize) -> ClipCaptionPair {
        ClipCaptionPair {
            video_id: video.into(),
            level,
            clip_index: i,
            t_start: 1000 * i as u64,
            t_end: 1000 * i as u64 + 900,
            caption: format!("caption {i}"),
            parent_step: None,
            parent_phase: None,
        }
    }

    fn meta(video: &str) -> BTreeMap<String, VideoMeta> {
        BTreeMap::from([(
            video.to_string(),
            VideoMeta {
                video_id: video.into(),
                title: String::new(),
                procedure_type: String::new(),
                fps: 30.0,
                source: VideoSource::Public,
            },
        )])
    }

    fn verdicts(pairs: &[ClipCaptionPair], retained: &[bool]) -> BTreeMap<PairKey, FilterVerdict> {
        pairs
            .iter()
            .zip(retained)
            .map(|(p, &r)| {
                let v = if r {
                    VisualLabel::Surgical
                } else {
                    VisualLabel::NonSurgical
                };
                (
                    PairKey::of(p),
                    FilterVerdict::new(Some(v), Some(TextualLabel::Descriptive)),
                )
            })
            .collect()
    }

    #[test]
    fn training_caption_follows_source() {
        let mut r = assemble_manifest(
            &[pair("v", Task, 0)],
            None,
            &BTreeMap::new(),
            &meta("v"),
            &BTreeMap::new(),
        )
        .unwrap()
        .remove(0);
        assert_eq!(r.training_caption(CaptionSource::default()), r.caption);
        r.caption_enriched = Some("rich".into());
        assert_eq!(r.training_caption(CaptionSource::Enriched), "rich");
        assert_eq!(r.training_caption(CaptionSource::Raw), r.caption);
    }

    #[test]
    fn three_pairs_two_retained() {
        let pairs: Vec<_> = (0..3).map(|i| pair("v", Task, i)).collect();
        let v = verdicts(&pairs, &[true, true, false]);
        let recs = assemble_manifest(&pairs, Some(&v), &BTreeMap::new(), &meta("v"), &BTreeMap::new()).unwrap();
        let flags: Vec<_> = recs.iter().map(|r| r.retained).collect();
        assert_eq!(flags, vec![Some(true), Some(true), Some(false)]);
        let mut buf = Vec::new();
        write_manifest(&recs, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn identical_inputs_give_identical_bytes() {
        let pairs: Vec<_> = [Task, Phase, Step].iter().map(|&l| pair("v", l, 0)).collect();
        let v = verdicts(&pairs, &[true, false, true]);
        let emit = || {
            let recs = assemble_manifest(&pairs, Some(&v), &BTreeMap::new(), &meta("v"), &BTreeMap::new()).unwrap();
            let mut buf = Vec::new();
            write_manifest(&recs, &mut buf).unwrap();
            buf
        };
        let a = emit();
        assert_eq!(a, emit());
        let levels: Vec<_> = parse_manifest(std::str::from_utf8(&a).unwrap())
            .unwrap()
            .iter()
            .map(|r| r.level)
            .collect();
        assert_eq!(levels, vec![Phase, Step, Task]);
    }

    #[test]
    fn pair_without_verdict_is_key_mismatch() {
        let pairs: Vec<_> = (0..2).map(|i| pair("v", Task, i)).collect();
        let v = verdicts(&pairs[..1], &[true]);
        let err = assemble_manifest(&pairs, Some(&v), &BTreeMap::new(), &meta("v"), &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, DatasetError::KeyMismatch { clip_index: 1, .. }));
    }

    #[test]
    fn fixed_key_order() {
        let pairs = vec![pair("v", Task, 0)];
        let v = verdicts(&pairs, &[true]);
        let e = BTreeMap::from([(
            PairKey::of(&pairs[0]),
            Enrichment {
                caption_enriched: Some("rich".into()),
                failed: false,
            },
        )]);
        let tax = BTreeMap::from([("v".to_string(), TaxonomyLabel::unknown())]);
        let recs = assemble_manifest(&pairs, Some(&v), &e, &meta("v"), &tax).unwrap();
        assert_eq!(
            record_line(&recs[0]),
            format!(
                r#"{{"schema_version":"{SCHEMA_VERSION}","video_id":"v","level":"task","clip_index":0,"t_start_ms":0,"t_end_ms":900,"caption":"caption 0","caption_enriched":"rich","visual_label":"surgical","textual_label":"descriptive","retained":true,"fps":30.0,"source":"public","taxonomy":{{"specialty":"{UNKNOWN}","subject":"{UNKNOWN}","procedure":"{UNKNOWN}","unresolved":true}}}}"#
            )
        );
    }

    #[test]
    fn invalid_records_are_rejected() {
        let pairs = vec![pair("v", Task, 0)];
        let recs = assemble_manifest(&pairs, None, &BTreeMap::new(), &meta("v"), &BTreeMap::new()).unwrap();
        let mut bad = recs[0].clone();
        bad.retained = Some(true);
        bad.visual_label = Some(VisualLabel::NonSurgical);
        assert!(bad.validate().is_err());
        let mut bad = recs[0].clone();
        bad.t_end_ms = bad.t_start_ms;
        assert!(bad.validate().is_err());
        assert!(matches!(
            parse_manifest("{}\n"),
            Err(DatasetError::Parse { line: 1, .. })
        ));
        let extra = record_line(&recs[0]).replace("\"fps\"", "\"bogus\":1,\"fps\"");
        assert!(parse_manifest(&extra).is_err());
    }

    fn arb_record() -> impl Strategy<Value = ManifestRecord> {
        (
            "[a-z0-9_]{1,8}",
            prop::sample::select(GranularityLevel::ALL.to_vec()),
            0usize..1000,
            0u64..10_000_000,
            1u64..100_000,
            "\\PC{0,40}",
            prop::option::of("\\PC{0,40}"),
            prop::option::of((prop::option::of(any::<bool>()), prop::option::of(any::<bool>()))),
            (prop::option::of(0usize..50), prop::option::of(0usize..50)),
            (0.1f64..240.0, any::<bool>(), any::<bool>()),
        )
            .prop_map(
                |(vid, level, idx, start, len, caption, enriched, labels, parents, (fps, private, tax))| {
                    let verdict = labels.map(|(v, t)| {
                        FilterVerdict::new(
                            v.map(|s| {
                                if s {
                                    VisualLabel::Surgical
                                } else {
                                    VisualLabel::NonSurgical
                                }
                            }),
                            t.map(|d| {
                                if d {
                                    TextualLabel::Descriptive
                                } else {
                                    TextualLabel::NonDescriptive
                                }
                            }),
                        )
                    });
                    ManifestRecord {
                        schema_version: SCHEMA_VERSION.into(),
                        video_id: vid,
                        level,
                        clip_index: idx,
                        t_start_ms: start,
                        t_end_ms: start + len,
                        caption,
                        enrichment_failed: enriched.is_none() && private,
                        caption_enriched: enriched,
                        visual_label: verdict.and_then(|v| v.visual),
                        textual_label: verdict.and_then(|v| v.textual),
                        retained: verdict.map(|v| v.retained),
                        parent_step: parents.0,
                        parent_phase: parents.1,
                        fps,
                        source: if private {
                            VideoSource::Private
                        } else {
                            VideoSource::Public
                        },
                        taxonomy: tax.then(|| TaxonomyLabel {
                            specialty: "Urology".into(),
                            subject: "Kidney".into(),
                            procedure: "Partial nephrectomy".into(),
                            unresolved: false,
                        }),
                    }
                },
            )
    }

    proptest! {
        #[test]
        fn round_trip_is_field_exact(records in prop::collection::vec(arb_record(), 0..20)) {
            let mut buf = Vec::new();
            write_manifest(&records, &mut buf).unwrap();
            let parsed = parse_manifest(std::str::from_utf8(&buf).unwrap()).unwrap();
            prop_assert_eq!(parsed, records);
        }
    }
}
