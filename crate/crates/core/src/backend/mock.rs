//! Deterministic, rule-based stand-ins for every backend kind.
//!
//! The mock speaks the real wire protocol: it parses request lines and
//! answers with response lines, so the client's validation path is
//! exercised exactly as with a remote endpoint.
//!
//! Rules, per kind:
//!
//! * `embed.text` / `embed.image`: [`mock_embed`]. Image bytes are decoded
//!   as (lossy) UTF-8 scene descriptions.
//! * `asr.transcribe`: returns the narration stored in a media script.
//! * `seg.hierarchy`: sentences are grouped in order. A sentence whose first
//!   token is a phase cue opens a new phase; a step cue (or a full step)
//!   opens a new step; a new step or a full task opens a new task. Tasks
//!   hold `sentences_per_task` sentences and steps hold `tasks_per_step`
//!   tasks. Each segment spans its first sentence's start to its last
//!   sentence's end.
//! * `text.judge`: descriptive iff the caption contains at least
//!   `judge_min_keywords` distinct anatomy/instrument keywords.
//! * `text.enrich`: `In this {procedure_type}: {caption} ({n} prior captions)`.
//! * `text.taxonomy`: the first keyword (in table order) found in the
//!   summary selects a procedure; its specialty and subject are looked up in
//!   the request's tree.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::media::MediaScript;
use super::protocol::{
    AsrRequest, BackendRequest, BackendResponse, EmbeddingResult, EnrichRequest, EnrichResult, HierarchyProposal,
    JudgeRequest, JudgeResult, ProposedSegment, RequestPayload, ResponseResult, SegmentationRequest, TaxonomyRequest,
    TaxonomyResult,
};
use super::transport::{Transport, TransportError};
use crate::dataset::taxonomy::{TaxonomyTree, UNKNOWN};
use crate::filtering::TextualLabel;

pub const DEFAULT_EMBED_DIM: usize = 64;
pub const SURGICAL_ANCHOR: &str = "surgical";
pub const NON_SURGICAL_ANCHOR: &str = "non-surgical";

const SURGICAL_TOKENS: &[&str] = &[
    "surgical",
    "surgery",
    "laparoscopic",
    "endoscopic",
    "robotic",
    "operative",
    "intraoperative",
    "tissue",
    "dissection",
    "dissecting",
    "cautery",
    "grasper",
    "graspers",
    "instrument",
    "instruments",
    "trocar",
    "bleeding",
    "organ",
    "incision",
    "scissors",
    "stapler",
    "suture",
    "suturing",
    "clip",
    "clipping",
    "forceps",
    "retractor",
    "peritoneum",
    "gallbladder",
    "vessel",
    "anatomy",
];

const NON_SURGICAL_TOKENS: &[&str] = &[
    "lecture",
    "slide",
    "slides",
    "podium",
    "presenter",
    "speaker",
    "audience",
    "logo",
    "screen",
    "room",
    "person",
    "talking",
    "diagram",
    "animation",
    "whiteboard",
    "studio",
    "interview",
    "outdoor",
    "credits",
];

const JUDGE_KEYWORDS: &[&str] = &[
    "gallbladder",
    "cystic",
    "duct",
    "artery",
    "liver",
    "hepatic",
    "calot",
    "peritoneum",
    "fat",
    "tissue",
    "vessel",
    "vein",
    "appendix",
    "mesoappendix",
    "colon",
    "bowel",
    "mesentery",
    "stomach",
    "prostate",
    "bladder",
    "urethra",
    "hernia",
    "mesh",
    "fascia",
    "muscle",
    "grasper",
    "hook",
    "cautery",
    "clip",
    "clips",
    "scissors",
    "stapler",
    "trocar",
    "port",
    "suture",
    "needle",
    "forceps",
    "retractor",
    "bipolar",
    "dissector",
    "specimen",
];

const TAXONOMY_KEYWORDS: &[(&str, &str)] = &[
    ("gallbladder", "Laparoscopic cholecystectomy"),
    ("cholecystectomy", "Laparoscopic cholecystectomy"),
    ("appendix", "Laparoscopic appendectomy"),
    ("prostate", "Robotic radical prostatectomy"),
    ("hernia", "Inguinal hernia repair"),
    ("colon", "Sigmoid colectomy"),
    ("stomach", "Sleeve gastrectomy"),
    ("kidney", "Partial nephrectomy"),
    ("thyroid", "Thyroidectomy"),
];

const PHASE_CUES: &[&str] = &["phase", "finally"];
const STEP_CUES: &[&str] = &["next", "now", "then"];

/// Lowercased alphanumeric tokens.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

/// Token-to-anchor affinity used by [`mock_embed`].
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityTable {
    pub weight: f64,
    pub anchors: BTreeMap<String, String>,
}

impl Default for AffinityTable {
    fn default() -> Self {
        let mut anchors = BTreeMap::new();
        for t in SURGICAL_TOKENS {
            anchors.insert(t.to_string(), SURGICAL_ANCHOR.to_string());
        }
        for t in NON_SURGICAL_TOKENS {
            anchors.insert(t.to_string(), NON_SURGICAL_ANCHOR.to_string());
        }
        AffinityTable { weight: 3.0, anchors }
    }
}

impl AffinityTable {
    /// Lower bound on the cosine between an embedding with `k` matching
    /// tokens for one anchor (and none for any other) and that anchor:
    /// `(k·w − 1) / sqrt(1 + (k·w)² + 2·k·w)`, from `|r·a| ≤ 1`.
    pub fn cosine_floor(&self, k: usize) -> f64 {
        let kw = k as f64 * self.weight;
        (kw - 1.0) / (1.0 + kw * kw + 2.0 * kw).sqrt()
    }
}

fn stable_seed(domain: &str, input: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(domain.as_bytes());
    h.update([0u8]);
    h.update(input.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Unit vector drawn from a standard normal seeded by a hash of `input`.
pub fn hashed_unit_vector(domain: &str, input: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(domain, input));
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut v);
    v
}

pub fn anchor_vector(name: &str, dim: usize) -> Vec<f64> {
    hashed_unit_vector("surgforge-anchor", name, dim)
}

/// Deterministic unit embedding: `normalize(r + w · Σ anchor(token))` where
/// `r` is hash-seeded from the full input and the sum runs over every token
/// occurrence that has an anchor in `table`.
pub fn mock_embed(input: &str, dim: usize, table: &AffinityTable) -> Vec<f64> {
    assert!(dim >= 2, "embedding dimension must be at least 2");
    let mut v = hashed_unit_vector("surgforge-embed", input, dim);
    let mut anchor_cache: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for tok in tokens(input) {
        if let Some(anchor) = table.anchors.get(&tok) {
            let a = anchor_cache
                .entry(anchor.as_str())
                .or_insert_with(|| anchor_vector(anchor, dim));
            for (x, y) in v.iter_mut().zip(a.iter()) {
                *x += table.weight * y;
            }
        }
    }
    normalize(&mut v);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockConfig {
    pub dim: usize,
    pub affinity: AffinityTable,
    pub judge_keywords: BTreeSet<String>,
    pub judge_min_keywords: usize,
    pub taxonomy_keywords: Vec<(String, String)>,
    pub phase_cues: BTreeSet<String>,
    pub step_cues: BTreeSet<String>,
    pub sentences_per_task: usize,
    pub tasks_per_step: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        MockConfig {
            dim: DEFAULT_EMBED_DIM,
            affinity: AffinityTable::default(),
            judge_keywords: set(JUDGE_KEYWORDS),
            judge_min_keywords: 2,
            taxonomy_keywords: TAXONOMY_KEYWORDS
                .iter()
                .map(|(k, p)| (k.to_string(), p.to_string()))
                .collect(),
            phase_cues: set(PHASE_CUES),
            step_cues: set(STEP_CUES),
            sentences_per_task: 2,
            tasks_per_step: 2,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    pub config: MockConfig,
}

impl MockBackend {
    pub fn new(config: MockConfig) -> Self {
        MockBackend { config }
    }

    pub fn respond(&self, req: &BackendRequest) -> BackendResponse {
        let id = req.request_id.clone();
        match &req.payload {
            RequestPayload::EmbedText(p) => BackendResponse::ok(
                id,
                ResponseResult::Embedding(EmbeddingResult {
                    vector: mock_embed(&p.text, self.config.dim, &self.config.affinity),
                }),
            ),
            RequestPayload::EmbedImage(p) => match base64::engine::general_purpose::STANDARD.decode(&p.image_b64) {
                Ok(bytes) => {
                    let text = String::from_utf8_lossy(&bytes);
                    BackendResponse::ok(
                        id,
                        ResponseResult::Embedding(EmbeddingResult {
                            vector: mock_embed(&text, self.config.dim, &self.config.affinity),
                        }),
                    )
                }
                Err(e) => BackendResponse::error(id, "bad_image", e.to_string(), false),
            },
            RequestPayload::AsrTranscribe(p) => self.transcribe(id, p),
            RequestPayload::SegHierarchy(p) => BackendResponse::ok(id, ResponseResult::Hierarchy(self.segment(p))),
            RequestPayload::TextJudge(p) => BackendResponse::ok(id, ResponseResult::Judge(self.judge(p))),
            RequestPayload::TextEnrich(p) => BackendResponse::ok(id, ResponseResult::Enrich(self.enrich(p))),
            RequestPayload::TextTaxonomy(p) => BackendResponse::ok(id, ResponseResult::Taxonomy(self.taxonomy(p))),
        }
    }

    fn transcribe(&self, id: String, p: &AsrRequest) -> BackendResponse {
        match MediaScript::load(Path::new(&p.media)) {
            Ok(MediaScript {
                narration: Some(mut doc),
                duration_ms,
                ..
            }) => {
                doc.duration_ms = Some(p.duration_ms.unwrap_or(duration_ms));
                BackendResponse::ok(id, ResponseResult::Asr(doc))
            }
            Ok(_) => BackendResponse::error(id, "no_audio", "media script has no narration", false),
            Err(e) => BackendResponse::error(id, "unsupported_media", e.to_string(), false),
        }
    }

    pub fn segment(&self, p: &SegmentationRequest) -> HierarchyProposal {
        let cfg = &self.config;
        let mut phases: Vec<Vec<Vec<Vec<usize>>>> = Vec::new();
        for (i, s) in p.sentences.iter().enumerate() {
            let first = tokens(&s.text).next().unwrap_or_default();
            let new_phase = i == 0 || cfg.phase_cues.contains(&first);
            if new_phase {
                phases.push(vec![vec![vec![i]]]);
                continue;
            }
            let phase = phases.last_mut().unwrap();
            let step = phase.last().unwrap();
            let task_full = step.last().unwrap().len() >= cfg.sentences_per_task;
            let new_step = cfg.step_cues.contains(&first) || (task_full && step.len() >= cfg.tasks_per_step);
            if new_step {
                phase.push(vec![vec![i]]);
            } else if task_full {
                phase.last_mut().unwrap().push(vec![i]);
            } else {
                phase.last_mut().unwrap().last_mut().unwrap().push(i);
            }
        }

        let span = |idx: &[usize]| {
            let first = &p.sentences[idx[0]];
            let last = &p.sentences[*idx.last().unwrap()];
            let topic: Vec<String> = tokens(&first.text).take(3).collect();
            ProposedSegment {
                start_ms: first.start_ms,
                end_ms: last.end_ms,
                topic: (!topic.is_empty()).then(|| topic.join(" ")),
            }
        };
        let mut out = HierarchyProposal {
            phases: Vec::new(),
            steps: Vec::new(),
            tasks: Vec::new(),
        };
        for phase in &phases {
            let all: Vec<usize> = phase.iter().flatten().flatten().copied().collect();
            out.phases.push(span(&all));
            for step in phase {
                let all: Vec<usize> = step.iter().flatten().copied().collect();
                out.steps.push(span(&all));
                for task in step {
                    out.tasks.push(span(task));
                }
            }
        }
        out
    }

    pub fn judge(&self, p: &JudgeRequest) -> JudgeResult {
        let hits: BTreeSet<String> = tokens(&p.caption)
            .filter(|t| self.config.judge_keywords.contains(t))
            .collect();
        let label = if hits.len() >= self.config.judge_min_keywords {
            TextualLabel::Descriptive
        } else {
            TextualLabel::NonDescriptive
        };
        JudgeResult { label }
    }

    pub fn enrich(&self, p: &EnrichRequest) -> EnrichResult {
        let procedure = if p.procedure_type.trim().is_empty() {
            "procedure"
        } else {
            p.procedure_type.trim()
        };
        EnrichResult {
            caption: format!(
                "In this {procedure}: {} ({} prior captions)",
                p.caption,
                p.context.len()
            ),
        }
    }

    pub fn taxonomy(&self, p: &TaxonomyRequest) -> TaxonomyResult {
        let summary_tokens: BTreeSet<String> = tokens(&p.summary).collect();
        let unknown = || TaxonomyResult {
            specialty: UNKNOWN.into(),
            subject: UNKNOWN.into(),
            procedure: UNKNOWN.into(),
        };
        let Some((_, procedure)) = self
            .config
            .taxonomy_keywords
            .iter()
            .find(|(k, _)| summary_tokens.contains(k))
        else {
            return unknown();
        };
        let Ok(tree) = serde_json::from_value::<TaxonomyTree>(p.tree.clone()) else {
            return unknown();
        };
        match tree.path_of(procedure) {
            Some((specialty, subject)) => TaxonomyResult {
                specialty: specialty.to_string(),
                subject: subject.to_string(),
                procedure: procedure.clone(),
            },
            None => TaxonomyResult {
                specialty: UNKNOWN.into(),
                subject: UNKNOWN.into(),
                procedure: procedure.clone(),
            },
        }
    }
}

impl Transport for MockBackend {
    fn exchange(&self, line: &str) -> Result<String, TransportError> {
        let req = BackendRequest::from_line(line)
            .map_err(|e| TransportError::permanent(format!("mock received invalid request: {e}")))?;
        Ok(self.respond(&req).to_line())
    }
}
