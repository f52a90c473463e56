//! Executes stages for every corpus video on a worker pool.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use super::corpus::{load_corpus, CorpusEntry};
use super::prompts::PromptSet;
use super::workdir::{read_json, read_jsonl, write_json, write_jsonl, CheckpointStatus, WorkDir};
use super::{PipelineError, Stage};
use crate::backend::media::AutoDecoder;
use crate::backend::protocol::{AsrDocument, AsrRequest};
use crate::backend::{BackendClient, BackendError, BackendKind, RequestPayload, ResponseResult};
use crate::dataset::{
    assemble_manifest, classify_taxonomy, transcript_summary, write_manifest_file, DatasetError, ManifestRecord,
    PairKey, TaxonomyLabel, TaxonomyTree,
};
use crate::enrichment::{build_context, enrich_caption, Enrichment};
use crate::filtering::{
    build_class_embedding, judge_descriptive, propagate_labels, ClassEmbedding, ClipVisual, FilterError, FilterVerdict,
    VisualClassifier, VisualLabel,
};
use crate::hierarchy::{
    align_segments, segment_transcript, sentence_hierarchy, ClipCaptionPair, GranularityLevel, HierarchyError,
    HierarchySegmentation, RepairReport,
};
use crate::transcript::{ingest_transcript, Transcript, TranscriptError};

const TRANSCRIPT: &str = "transcript.json";
const HIERARCHY: &str = "hierarchy.json";
const PAIRS: &str = "pairs.jsonl";
const VERDICTS: &str = "verdicts.jsonl";
const TASK_VISUALS: &str = "task_visuals.jsonl";
const ENRICHMENTS: &str = "enrichments.jsonl";
const TAXONOMY: &str = "taxonomy.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyArtifact {
    pub hierarchy: HierarchySegmentation,
    pub repair: RepairReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub level: GranularityLevel,
    pub clip_index: usize,
    pub verdict: FilterVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskVisualRow {
    pub clip_index: usize,
    pub visual: ClipVisual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichmentRow {
    pub level: GranularityLevel,
    pub clip_index: usize,
    pub enrichment: Enrichment,
}

/// Per-stage video counts for one invocation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StageSummary {
    pub ran: usize,
    pub already_done: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub videos: usize,
    /// Videos dropped for an empty transcription.
    pub discarded: Vec<String>,
    pub stages: BTreeMap<Stage, StageSummary>,
    /// Records in the rebuilt manifest, when one was written.
    pub manifest_records: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Ran,
    AlreadyDone,
}

struct VideoResult {
    outcomes: Vec<(Stage, Outcome)>,
    discarded: bool,
    error: Option<(Stage, PipelineError)>,
}

fn digest(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Every stage that consumes `stage`'s output, directly or not, and
/// `stage` itself.
pub fn downstream(stage: Stage) -> Vec<Stage> {
    Stage::ALL
        .into_iter()
        .filter(|&s| {
            let mut cur = Some(s);
            while let Some(c) = cur {
                if c == stage {
                    return true;
                }
                cur = c.requires();
            }
            false
        })
        .collect()
}

pub struct Runner {
    cfg: PipelineConfig,
    corpus: Vec<CorpusEntry>,
    work: WorkDir,
    client: BackendClient,
    decoder: AutoDecoder,
    prompts: PromptSet,
    tree: TaxonomyTree,
    classes: OnceLock<Result<Vec<ClassEmbedding>, PipelineError>>,
}

impl Runner {
    /// Validates the configuration and opens the corpus and work directory
    /// named in `cfg.paths`.
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let corpus_path = cfg
            .paths
            .corpus
            .clone()
            .ok_or_else(|| PipelineError::Config("no corpus file given".into()))?;
        let work_path = cfg
            .paths
            .work_dir
            .clone()
            .ok_or_else(|| PipelineError::Config("no work directory given".into()))?;
        let prompts = PromptSet::load(&cfg.prompts, &cfg.base_dir)?;
        let tree = match &cfg.taxonomy.tree {
            Some(p) => TaxonomyTree::load(p),
            None => Ok(TaxonomyTree::default_tree()),
        }
        .and_then(|t| t.validate().map(|_| t))
        .map_err(|e| PipelineError::Config(format!("taxonomy tree: {e}")))?;
        let corpus = load_corpus(&corpus_path)?;
        let client = cfg.build_client()?;
        let work = WorkDir::open(&work_path)?;
        Ok(Runner {
            decoder: AutoDecoder::new(cfg.paths.ffmpeg.clone()),
            cfg,
            corpus,
            work,
            client,
            prompts,
            tree,
            classes: OnceLock::new(),
        })
    }

    pub fn corpus(&self) -> &[CorpusEntry] {
        &self.corpus
    }

    pub fn work_dir(&self) -> &WorkDir {
        &self.work
    }

    /// The settings a stage's artifacts depend on.
    fn stage_settings(&self, stage: Stage) -> serde_json::Value {
        let endpoints = self.cfg.resolved_endpoints();
        let ep = |k: BackendKind| endpoints.get(&k).cloned();
        let st = &self.cfg.stages;
        let p = &self.prompts;
        match stage {
            Stage::Ingest => json!({ "asr": ep(BackendKind::AsrTranscribe) }),
            Stage::Segment if st.mlsc => json!({
                "mlsc": true,
                "segmenter": ep(BackendKind::SegHierarchy),
                "prompt": digest(&p.segmentation),
            }),
            Stage::Segment | Stage::Align => json!({ "mlsc": st.mlsc }),
            Stage::Filter => {
                let visual = st.visual().then(|| {
                    json!({
                        "n_frames": self.cfg.filtering.n_frames,
                        "vote_threshold": self.cfg.filtering.vote_threshold,
                        "decision": self.cfg.filtering.decision,
                        "embed_text": ep(BackendKind::EmbedText),
                        "embed_image": ep(BackendKind::EmbedImage),
                        "classes": digest(&format!("{:?}/{:?}", p.surgical, p.non_surgical)),
                    })
                });
                let textual = st
                    .textual()
                    .then(|| json!({ "judge": ep(BackendKind::TextJudge), "prompt": digest(&p.judge) }));
                json!({ "visual": visual, "textual": textual })
            }
            Stage::Enrich => {
                let ce = st.ce.then(|| {
                    json!({
                        "context_window": self.cfg.enrichment.context_window,
                        "enricher": ep(BackendKind::TextEnrich),
                        "prompt": digest(&p.enrich),
                    })
                });
                json!({ "ce": ce })
            }
            Stage::Taxonomy => json!({
                "tree": digest(&serde_json::to_string(&self.tree).expect("tree serializes")),
                "summary_chars": self.cfg.taxonomy.summary_chars,
                "classifier": ep(BackendKind::TextTaxonomy),
                "prompt": digest(&p.taxonomy),
            }),
        }
    }

    /// Forgets `stage` and everything downstream of it so that the next
    /// run recomputes them, possibly under new settings.
    pub fn restart_from(&self, stage: Stage) -> Result<(), PipelineError> {
        self.work.reset(&downstream(stage))
    }

    fn check_settings(&self, stages: &[Stage]) -> Result<(), PipelineError> {
        for stage in Stage::ALL {
            let current = self.stage_settings(stage);
            match self.work.stage_settings(stage) {
                Some(recorded) if recorded != current => {
                    return Err(PipelineError::Config(format!(
                        "{stage} artifacts in {} were produced with different settings; \
                         restart from {stage} or use a fresh work directory",
                        self.work.root().display()
                    )))
                }
                Some(_) => {}
                None if stages.contains(&stage) => self.work.set_stage_settings(stage, current)?,
                None => {}
            }
        }
        Ok(())
    }

    fn require_endpoint(&self, kind: BackendKind) -> Result<(), PipelineError> {
        if self.client.endpoint(kind).is_some() {
            return Ok(());
        }
        Err(PipelineError::Config(format!(
            "no endpoint configured for {kind}; set backend.endpoints.\"{kind}\", \
             SURGFORGE_ENDPOINT_{} or pass --mock",
            kind.env_suffix()
        )))
    }

    fn check_endpoints(&self, stages: &[Stage]) -> Result<(), PipelineError> {
        let st = &self.cfg.stages;
        for &stage in stages {
            let kinds: Vec<BackendKind> = match stage {
                Stage::Ingest if self.corpus.iter().any(|e| e.transcript.is_none()) => {
                    vec![BackendKind::AsrTranscribe]
                }
                Stage::Segment if st.mlsc => vec![BackendKind::SegHierarchy],
                Stage::Filter => {
                    let mut k = Vec::new();
                    if st.visual() {
                        k.extend([BackendKind::EmbedText, BackendKind::EmbedImage]);
                    }
                    if st.textual() {
                        k.push(BackendKind::TextJudge);
                    }
                    k
                }
                Stage::Enrich if st.ce => vec![BackendKind::TextEnrich],
                Stage::Taxonomy => vec![BackendKind::TextTaxonomy],
                _ => Vec::new(),
            };
            for kind in kinds {
                self.require_endpoint(kind)?;
            }
        }
        Ok(())
    }

    /// Runs `stages` (in pipeline order) for every video not yet done,
    /// then rebuilds the manifest if a stage that feeds it was requested.
    /// Per-video failures do not stop other videos; the first one in corpus
    /// order is returned after the pass.
    pub fn run(&self, stages: &[Stage]) -> Result<RunReport, PipelineError> {
        let mut stages = stages.to_vec();
        stages.sort();
        stages.dedup();
        self.check_endpoints(&stages)?;
        self.check_settings(&stages)?;

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers)
            .build()
            .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
        let results: Vec<VideoResult> =
            pool.install(|| self.corpus.par_iter().map(|e| self.process_video(e, &stages)).collect());

        let mut report = RunReport {
            videos: self.corpus.len(),
            ..Default::default()
        };
        for &s in &stages {
            report.stages.insert(s, StageSummary::default());
        }
        let mut first_error = None;
        for (entry, r) in self.corpus.iter().zip(results) {
            for (stage, outcome) in r.outcomes {
                let s = report.stages.entry(stage).or_default();
                match outcome {
                    Outcome::Ran => s.ran += 1,
                    Outcome::AlreadyDone => s.already_done += 1,
                }
            }
            if r.discarded {
                report.discarded.push(entry.video_id.clone());
            }
            if let Some((stage, err)) = r.error {
                log::error!("{}: {stage}: {err}", entry.video_id);
                report.stages.entry(stage).or_default().failed += 1;
                first_error.get_or_insert(err);
            }
        }

        let feeds_manifest = stages
            .iter()
            .any(|s| matches!(s, Stage::Align | Stage::Filter | Stage::Enrich | Stage::Taxonomy));
        if feeds_manifest {
            let records = self.assemble()?;
            write_manifest_file(&records, &self.work.manifest_path()).map_err(dataset_err)?;
            report.manifest_records = Some(records.len());
        }
        match first_error {
            Some(e) => Err(e),
            None => Ok(report),
        }
    }

    fn process_video(&self, e: &CorpusEntry, stages: &[Stage]) -> VideoResult {
        let id = e.video_id.as_str();
        let mut out = VideoResult {
            outcomes: Vec::new(),
            discarded: false,
            error: None,
        };
        for &stage in stages {
            if self.work.is_discarded(id) {
                out.discarded = true;
                break;
            }
            if self.work.is_done(id, stage) {
                out.outcomes.push((stage, Outcome::AlreadyDone));
                continue;
            }
            if let Some(missing) = stage.requires().filter(|&r| !self.work.is_done(id, r)) {
                out.error = Some((
                    stage,
                    PipelineError::Precondition {
                        video_id: id.to_string(),
                        stage,
                        missing,
                    },
                ));
                break;
            }
            let result = self.run_stage(e, stage).and_then(|status| {
                self.work.record(id, stage, status)?;
                Ok(status)
            });
            match result {
                Ok(CheckpointStatus::Done) => out.outcomes.push((stage, Outcome::Ran)),
                Ok(CheckpointStatus::Discarded) => {
                    out.outcomes.push((stage, Outcome::Ran));
                    out.discarded = true;
                    break;
                }
                Err(err) => {
                    out.error = Some((stage, err));
                    break;
                }
            }
        }
        out
    }

    fn run_stage(&self, e: &CorpusEntry, stage: Stage) -> Result<CheckpointStatus, PipelineError> {
        let dir = self.work.video_dir(&e.video_id)?;
        match stage {
            Stage::Ingest => self.ingest(e, &dir),
            Stage::Segment => self.segment(e, &dir),
            Stage::Align => self.align(&dir),
            Stage::Filter => self.filter(e, &dir),
            Stage::Enrich => self.enrich(e, &dir),
            Stage::Taxonomy => self.taxonomy(e, &dir),
        }
    }

    fn backend_err(&self, e: &CorpusEntry, stage: Stage, err: BackendError) -> PipelineError {
        match err {
            BackendError::NotConfigured(kind) => PipelineError::Config(format!("no endpoint configured for {kind}")),
            other => PipelineError::Backend {
                video_id: e.video_id.clone(),
                stage,
                message: other.to_string(),
            },
        }
    }

    fn ingest(&self, e: &CorpusEntry, dir: &Path) -> Result<CheckpointStatus, PipelineError> {
        let doc: AsrDocument = match &e.transcript {
            Some(path) => read_json(path).map_err(|err| PipelineError::Input(err.to_string()))?,
            None => {
                let req = AsrRequest {
                    media: e.media.display().to_string(),
                    duration_ms: Some(e.duration_ms),
                };
                match self.client.request(RequestPayload::AsrTranscribe(req)) {
                    Ok(ResponseResult::Asr(doc)) => doc,
                    Ok(_) => unreachable!("validated result kind"),
                    Err(err) => return Err(self.backend_err(e, Stage::Ingest, err)),
                }
            }
        };
        match ingest_transcript(&e.video_id, &doc, e.duration_ms) {
            Ok(t) => {
                write_json(&dir.join(TRANSCRIPT), &t)?;
                Ok(CheckpointStatus::Done)
            }
            Err(TranscriptError::EmptyTranscription(_)) => {
                log::info!("{}: empty transcription, video discarded", e.video_id);
                Ok(CheckpointStatus::Discarded)
            }
            Err(err) => Err(PipelineError::Input(err.to_string())),
        }
    }

    fn segment(&self, e: &CorpusEntry, dir: &Path) -> Result<CheckpointStatus, PipelineError> {
        let t: Transcript = read_json(&dir.join(TRANSCRIPT))?;
        let result = if self.cfg.stages.mlsc {
            segment_transcript(&t, &self.client, &self.prompts.segmentation)
        } else {
            sentence_hierarchy(&t)
        };
        let (hierarchy, repair) = result.map_err(|err| match err {
            HierarchyError::BackendFailure(b) => self.backend_err(e, Stage::Segment, b),
            other => PipelineError::Backend {
                video_id: e.video_id.clone(),
                stage: Stage::Segment,
                message: other.to_string(),
            },
        })?;
        if !repair.is_clean() {
            log::info!("{}: segmentation repaired: {repair:?}", e.video_id);
        }
        write_json(&dir.join(HIERARCHY), &HierarchyArtifact { hierarchy, repair })?;
        Ok(CheckpointStatus::Done)
    }

    fn levels(&self) -> Vec<GranularityLevel> {
        if self.cfg.stages.mlsc {
            GranularityLevel::ALL.to_vec()
        } else {
            vec![GranularityLevel::Task]
        }
    }

    fn align(&self, dir: &Path) -> Result<CheckpointStatus, PipelineError> {
        let t: Transcript = read_json(&dir.join(TRANSCRIPT))?;
        let h: HierarchyArtifact = read_json(&dir.join(HIERARCHY))?;
        let mut pairs = Vec::new();
        for level in self.levels() {
            let a = align_segments(&t, &h.hierarchy, level);
            if a.dropped_empty > 0 {
                log::info!(
                    "{}: {} {level} segments hold no whole word",
                    t.video_id,
                    a.dropped_empty
                );
            }
            pairs.extend(a.pairs);
        }
        pairs.sort_by_key(PairKey::of);
        write_jsonl(&dir.join(PAIRS), &pairs)?;
        Ok(CheckpointStatus::Done)
    }

    fn class_embeddings(&self) -> Result<&[ClassEmbedding], PipelineError> {
        let built = self.classes.get_or_init(|| {
            let build = |name: &str, prompts: &[String]| {
                build_class_embedding(name, prompts, &self.client).map_err(|err| match err {
                    FilterError::BackendFailure(b) => PipelineError::Backend {
                        video_id: String::new(),
                        stage: Stage::Filter,
                        message: format!("class prompts: {b}"),
                    },
                    other => PipelineError::Config(format!("class prompts: {other}")),
                })
            };
            Ok(vec![
                build("surgical", &self.prompts.surgical)?,
                build("non-surgical", &self.prompts.non_surgical)?,
            ])
        });
        built.as_deref().map_err(Clone::clone)
    }

    fn filter_err(&self, e: &CorpusEntry, err: FilterError) -> PipelineError {
        match err {
            FilterError::BackendFailure(b) => self.backend_err(e, Stage::Filter, b),
            FilterError::UnparseableVerdict(m) => PipelineError::Backend {
                video_id: e.video_id.clone(),
                stage: Stage::Filter,
                message: m,
            },
            other => PipelineError::Invariant(format!("{}: {other}", e.video_id)),
        }
    }

    fn filter(&self, e: &CorpusEntry, dir: &Path) -> Result<CheckpointStatus, PipelineError> {
        let pairs: Vec<ClipCaptionPair> = read_jsonl(&dir.join(PAIRS))?;
        let st = &self.cfg.stages;

        let visual = if st.visual() {
            let h: HierarchyArtifact = read_json(&dir.join(HIERARCHY))?;
            let classifier = VisualClassifier {
                client: &self.client,
                decoder: &self.decoder,
                classes: self.class_embeddings()?,
                surgical_index: 0,
                n_frames: self.cfg.filtering.n_frames,
                threshold: self.cfg.filtering.vote_threshold,
                decision: self.cfg.filtering.decision,
            };
            let mut rows = Vec::with_capacity(h.hierarchy.tasks.len());
            for task in &h.hierarchy.tasks {
                let v = classifier
                    .classify_clip(&e.media, task.t_start, task.t_end)
                    .map_err(|err| self.filter_err(e, err))?;
                rows.push(TaskVisualRow {
                    clip_index: task.index,
                    visual: v,
                });
            }
            write_jsonl(&dir.join(TASK_VISUALS), &rows)?;
            let tasks: Vec<VisualLabel> = rows.iter().map(|r| r.visual.label).collect();
            let lifted = propagate_labels(&tasks, &h.hierarchy).map_err(|err| self.filter_err(e, err))?;
            Some((tasks, lifted))
        } else {
            None
        };

        let mut verdicts = Vec::with_capacity(pairs.len());
        for p in &pairs {
            let v = match &visual {
                Some((tasks, lifted)) => {
                    let labels = match p.level {
                        GranularityLevel::Phase => &lifted.phases,
                        GranularityLevel::Step => &lifted.steps,
                        GranularityLevel::Task => tasks,
                    };
                    let label = labels.get(p.clip_index).copied().ok_or_else(|| {
                        PipelineError::Invariant(format!(
                            "{}: no visual label for {} {}",
                            e.video_id, p.level, p.clip_index
                        ))
                    })?;
                    Some(label)
                }
                None => None,
            };
            let t = if st.textual() {
                Some(
                    judge_descriptive(&p.caption, &self.client, &self.prompts.judge)
                        .map_err(|err| self.filter_err(e, err))?,
                )
            } else {
                None
            };
            verdicts.push(VerdictRow {
                level: p.level,
                clip_index: p.clip_index,
                verdict: FilterVerdict::new(v, t),
            });
        }
        write_jsonl(&dir.join(VERDICTS), &verdicts)?;
        Ok(CheckpointStatus::Done)
    }

    fn enrich(&self, e: &CorpusEntry, dir: &Path) -> Result<CheckpointStatus, PipelineError> {
        let mut rows = Vec::new();
        if self.cfg.stages.ce {
            let pairs: Vec<ClipCaptionPair> = read_jsonl(&dir.join(PAIRS))?;
            let verdicts = verdict_map(&e.video_id, read_jsonl(&dir.join(VERDICTS))?);
            let meta = e.meta();
            for (j, p) in pairs.iter().enumerate() {
                if !verdicts.get(&PairKey::of(p)).is_some_and(|v| v.retained) {
                    continue;
                }
                let ctx = build_context(&pairs, j, self.cfg.enrichment.context_window);
                rows.push(EnrichmentRow {
                    level: p.level,
                    clip_index: p.clip_index,
                    enrichment: enrich_caption(p, &ctx, &meta, &self.client, &self.prompts.enrich),
                });
            }
        }
        write_jsonl(&dir.join(ENRICHMENTS), &rows)?;
        Ok(CheckpointStatus::Done)
    }

    fn taxonomy(&self, e: &CorpusEntry, dir: &Path) -> Result<CheckpointStatus, PipelineError> {
        let pairs: Vec<ClipCaptionPair> = read_jsonl(&dir.join(PAIRS))?;
        let phases: Vec<&str> = pairs
            .iter()
            .filter(|p| p.level == GranularityLevel::Phase)
            .map(|p| p.caption.as_str())
            .collect();
        let captions = if phases.is_empty() {
            pairs.iter().map(|p| p.caption.as_str()).collect()
        } else {
            phases
        };
        let summary = transcript_summary(captions, self.cfg.taxonomy.summary_chars);
        let label =
            classify_taxonomy(&summary, &self.tree, &self.client, &self.prompts.taxonomy).map_err(|err| match err {
                DatasetError::BackendFailure(b) => self.backend_err(e, Stage::Taxonomy, b),
                other => PipelineError::Invariant(other.to_string()),
            })?;
        write_json(&dir.join(TAXONOMY), &label)?;
        Ok(CheckpointStatus::Done)
    }

    /// Manifest records for every aligned video, in key order.
    pub fn assemble(&self) -> Result<Vec<ManifestRecord>, PipelineError> {
        let mut records = Vec::new();
        for e in &self.corpus {
            let id = e.video_id.as_str();
            if self.work.is_discarded(id) || !self.work.is_done(id, Stage::Align) {
                continue;
            }
            let dir = self.work.video_dir(id)?;
            let pairs: Vec<ClipCaptionPair> = read_jsonl(&dir.join(PAIRS))?;
            let verdicts = if self.work.is_done(id, Stage::Filter) {
                Some(verdict_map(id, read_jsonl(&dir.join(VERDICTS))?))
            } else {
                None
            };
            let enrichments: BTreeMap<PairKey, Enrichment> = if self.work.is_done(id, Stage::Enrich) {
                read_jsonl::<EnrichmentRow>(&dir.join(ENRICHMENTS))?
                    .into_iter()
                    .map(|r| (PairKey::new(id, r.level, r.clip_index), r.enrichment))
                    .collect()
            } else {
                BTreeMap::new()
            };
            let mut taxonomy = BTreeMap::new();
            if self.work.is_done(id, Stage::Taxonomy) {
                taxonomy.insert(id.to_string(), read_json::<TaxonomyLabel>(&dir.join(TAXONOMY))?);
            }
            let meta = BTreeMap::from([(id.to_string(), e.meta())]);
            records.extend(
                assemble_manifest(&pairs, verdicts.as_ref(), &enrichments, &meta, &taxonomy).map_err(dataset_err)?,
            );
        }
        Ok(records)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.work.manifest_path()
    }
}

fn verdict_map(video_id: &str, rows: Vec<VerdictRow>) -> BTreeMap<PairKey, FilterVerdict> {
    rows.into_iter()
        .map(|r| (PairKey::new(video_id, r.level, r.clip_index), r.verdict))
        .collect()
}

fn dataset_err(e: DatasetError) -> PipelineError {
    match e {
        DatasetError::Io { path, message } => PipelineError::Input(format!("{path}: {message}")),
        other => PipelineError::Invariant(other.to_string()),
    }
}
