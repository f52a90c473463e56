//! Wire schemas for the seven backend kinds.
//!
//! Every message is a single JSON object on one line. Requests carry
//! `{version, kind, request_id, payload}`; responses carry
//! `{version, request_id, status, result | error}`. Payload and result
//! objects reject unknown fields so that a message which parses is exactly
//! the message that re-serializes.

use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::filtering::TextualLabel;

pub const PROTOCOL_VERSION: &str = "1";

/// Tolerance on the Euclidean norm of embedding vectors returned by any
/// endpoint.
pub const EMBED_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BackendKind {
    #[serde(rename = "asr.transcribe")]
    AsrTranscribe,
    #[serde(rename = "seg.hierarchy")]
    SegHierarchy,
    #[serde(rename = "text.judge")]
    TextJudge,
    #[serde(rename = "text.enrich")]
    TextEnrich,
    #[serde(rename = "text.taxonomy")]
    TextTaxonomy,
    #[serde(rename = "embed.text")]
    EmbedText,
    #[serde(rename = "embed.image")]
    EmbedImage,
}

impl BackendKind {
    pub const ALL: [BackendKind; 7] = [
        BackendKind::AsrTranscribe,
        BackendKind::SegHierarchy,
        BackendKind::TextJudge,
        BackendKind::TextEnrich,
        BackendKind::TextTaxonomy,
        BackendKind::EmbedText,
        BackendKind::EmbedImage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::AsrTranscribe => "asr.transcribe",
            BackendKind::SegHierarchy => "seg.hierarchy",
            BackendKind::TextJudge => "text.judge",
            BackendKind::TextEnrich => "text.enrich",
            BackendKind::TextTaxonomy => "text.taxonomy",
            BackendKind::EmbedText => "embed.text",
            BackendKind::EmbedImage => "embed.image",
        }
    }

    /// Suffix used in `SURGFORGE_ENDPOINT_<KIND>` variables, e.g. `EMBED_TEXT`.
    pub fn env_suffix(self) -> String {
        self.as_str().replace('.', "_").to_ascii_uppercase()
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// ---------------------------------------------------------------------------
// Payloads
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsrRequest {
    /// Media locator understood by the ASR endpoint (usually a file path).
    pub media: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsrSegment {
    pub text: String,
    pub start_ms: u64,
    pub end_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsrWord {
    pub word: String,
    pub start_ms: u64,
    pub end_ms: u64,
}

/// ASR result: sentence segments plus a flat word list, both in integer
/// milliseconds. Also the on-disk format of pre-computed transcript files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsrDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
    pub segments: Vec<AsrSegment>,
    pub word_segments: Vec<AsrWord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationRequest {
    pub video_id: String,
    pub duration_ms: u64,
    pub sentences: Vec<AsrSegment>,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposedSegment {
    pub start_ms: u64,
    pub end_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyProposal {
    pub phases: Vec<ProposedSegment>,
    pub steps: Vec<ProposedSegment>,
    pub tasks: Vec<ProposedSegment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeRequest {
    pub caption: String,
    pub prompt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeResult {
    pub label: TextualLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnrichRequest {
    pub caption: String,
    pub context: Vec<String>,
    pub title: String,
    pub procedure_type: String,
    pub level: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnrichResult {
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyRequest {
    pub summary: String,
    /// The taxonomy tree in its file representation.
    pub tree: Value,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyResult {
    pub specialty: String,
    pub subject: String,
    pub procedure: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedTextRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedImageRequest {
    /// Base64 (standard alphabet, padded) encoded image bytes.
    pub image_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingResult {
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RequestPayload {
    AsrTranscribe(AsrRequest),
    SegHierarchy(SegmentationRequest),
    TextJudge(JudgeRequest),
    TextEnrich(EnrichRequest),
    TextTaxonomy(TaxonomyRequest),
    EmbedText(EmbedTextRequest),
    EmbedImage(EmbedImageRequest),
}

impl RequestPayload {
    pub fn kind(&self) -> BackendKind {
        match self {
            RequestPayload::AsrTranscribe(_) => BackendKind::AsrTranscribe,
            RequestPayload::SegHierarchy(_) => BackendKind::SegHierarchy,
            RequestPayload::TextJudge(_) => BackendKind::TextJudge,
            RequestPayload::TextEnrich(_) => BackendKind::TextEnrich,
            RequestPayload::TextTaxonomy(_) => BackendKind::TextTaxonomy,
            RequestPayload::EmbedText(_) => BackendKind::EmbedText,
            RequestPayload::EmbedImage(_) => BackendKind::EmbedImage,
        }
    }

    fn to_value(&self) -> Value {
        let v = match self {
            RequestPayload::AsrTranscribe(p) => serde_json::to_value(p),
            RequestPayload::SegHierarchy(p) => serde_json::to_value(p),
            RequestPayload::TextJudge(p) => serde_json::to_value(p),
            RequestPayload::TextEnrich(p) => serde_json::to_value(p),
            RequestPayload::TextTaxonomy(p) => serde_json::to_value(p),
            RequestPayload::EmbedText(p) => serde_json::to_value(p),
            RequestPayload::EmbedImage(p) => serde_json::to_value(p),
        };
        v.expect("payload structs always serialize")
    }

    fn from_value(kind: BackendKind, v: Value) -> Result<Self, SchemaError> {
        Ok(match kind {
            BackendKind::AsrTranscribe => RequestPayload::AsrTranscribe(typed(v)?),
            BackendKind::SegHierarchy => RequestPayload::SegHierarchy(typed(v)?),
            BackendKind::TextJudge => RequestPayload::TextJudge(typed(v)?),
            BackendKind::TextEnrich => RequestPayload::TextEnrich(typed(v)?),
            BackendKind::TextTaxonomy => RequestPayload::TextTaxonomy(typed(v)?),
            BackendKind::EmbedText => RequestPayload::EmbedText(typed(v)?),
            BackendKind::EmbedImage => RequestPayload::EmbedImage(typed(v)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResponseResult {
    Asr(AsrDocument),
    Hierarchy(HierarchyProposal),
    Judge(JudgeResult),
    Enrich(EnrichResult),
    Taxonomy(TaxonomyResult),
    Embedding(EmbeddingResult),
}

impl ResponseResult {
    fn to_value(&self) -> Value {
        let v = match self {
            ResponseResult::Asr(r) => serde_json::to_value(r),
            ResponseResult::Hierarchy(r) => serde_json::to_value(r),
            ResponseResult::Judge(r) => serde_json::to_value(r),
            ResponseResult::Enrich(r) => serde_json::to_value(r),
            ResponseResult::Taxonomy(r) => serde_json::to_value(r),
            ResponseResult::Embedding(r) => serde_json::to_value(r),
        };
        v.expect("result structs always serialize")
    }

    fn from_value(kind: BackendKind, v: Value) -> Result<Self, SchemaError> {
        let result = match kind {
            BackendKind::AsrTranscribe => ResponseResult::Asr(typed(v)?),
            BackendKind::SegHierarchy => ResponseResult::Hierarchy(typed(v)?),
            BackendKind::TextJudge => ResponseResult::Judge(typed(v)?),
            BackendKind::TextEnrich => ResponseResult::Enrich(typed(v)?),
            BackendKind::TextTaxonomy => ResponseResult::Taxonomy(typed(v)?),
            BackendKind::EmbedText | BackendKind::EmbedImage => ResponseResult::Embedding(typed(v)?),
        };
        result.validate()?;
        Ok(result)
    }

    /// Semantic checks the type system does not express.
    pub fn validate(&self) -> Result<(), SchemaError> {
        match self {
            ResponseResult::Embedding(e) => {
                if e.vector.len() < 2 {
                    return Err(SchemaError(format!(
                        "embedding has dimension {}, need at least 2",
                        e.vector.len()
                    )));
                }
                if e.vector.iter().any(|x| !x.is_finite()) {
                    return Err(SchemaError("embedding has non-finite entries".into()));
                }
                let norm = e.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > EMBED_NORM_TOLERANCE {
                    return Err(SchemaError(format!("embedding norm {norm} is not 1")));
                }
            }
            ResponseResult::Enrich(e) if e.caption.trim().is_empty() => {
                return Err(SchemaError("enriched caption is empty".into()));
            }
            ResponseResult::Taxonomy(t) if t.specialty.is_empty() || t.subject.is_empty() || t.procedure.is_empty() => {
                return Err(SchemaError("taxonomy result has an empty level".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn kind_matches(&self, kind: BackendKind) -> bool {
        matches!(
            (self, kind),
            (ResponseResult::Asr(_), BackendKind::AsrTranscribe)
                | (ResponseResult::Hierarchy(_), BackendKind::SegHierarchy)
                | (ResponseResult::Judge(_), BackendKind::TextJudge)
                | (ResponseResult::Enrich(_), BackendKind::TextEnrich)
                | (ResponseResult::Taxonomy(_), BackendKind::TextTaxonomy)
                | (
                    ResponseResult::Embedding(_),
                    BackendKind::EmbedText | BackendKind::EmbedImage
                )
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub retryable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResponseOutcome {
    Ok(ResponseResult),
    Error(ErrorBody),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaError(pub String);

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SchemaError {}

fn typed<T: DeserializeOwned>(v: Value) -> Result<T, SchemaError> {
    serde_json::from_value(v).map_err(|e| SchemaError(e.to_string()))
}

fn take_field(obj: &mut Map<String, Value>, key: &str) -> Result<Value, SchemaError> {
    obj.remove(key)
        .ok_or_else(|| SchemaError(format!("missing field `{key}`")))
}

fn take_string(obj: &mut Map<String, Value>, key: &str) -> Result<String, SchemaError> {
    match take_field(obj, key)? {
        Value::String(s) => Ok(s),
        other => Err(SchemaError(format!("field `{key}` must be a string, got {other}"))),
    }
}

fn check_version(obj: &mut Map<String, Value>) -> Result<(), SchemaError> {
    let version = take_string(obj, "version")?;
    if version != PROTOCOL_VERSION {
        return Err(SchemaError(format!("unsupported protocol version {version:?}")));
    }
    Ok(())
}

fn reject_leftovers(obj: &Map<String, Value>) -> Result<(), SchemaError> {
    match obj.keys().next() {
        Some(k) => Err(SchemaError(format!("unknown field `{k}`"))),
        None => Ok(()),
    }
}

fn into_object(v: Value) -> Result<Map<String, Value>, SchemaError> {
    match v {
        Value::Object(m) => Ok(m),
        other => Err(SchemaError(format!("message must be an object, got {other}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendRequest {
    pub request_id: String,
    pub payload: RequestPayload,
}

impl BackendRequest {
    pub fn kind(&self) -> BackendKind {
        self.payload.kind()
    }

    pub fn to_wire(&self) -> Value {
        json!({
            "version": PROTOCOL_VERSION,
            "kind": self.kind().as_str(),
            "request_id": self.request_id,
            "payload": self.payload.to_value(),
        })
    }

    pub fn to_line(&self) -> String {
        self.to_wire().to_string()
    }

    pub fn from_wire(v: Value) -> Result<Self, SchemaError> {
        let mut obj = into_object(v)?;
        check_version(&mut obj)?;
        let kind_str = take_string(&mut obj, "kind")?;
        let kind = BackendKind::parse(&kind_str).ok_or_else(|| SchemaError(format!("unknown kind {kind_str:?}")))?;
        let request_id = take_string(&mut obj, "request_id")?;
        let payload = RequestPayload::from_value(kind, take_field(&mut obj, "payload")?)?;
        reject_leftovers(&obj)?;
        Ok(BackendRequest { request_id, payload })
    }

    pub fn from_line(line: &str) -> Result<Self, SchemaError> {
        let v: Value = serde_json::from_str(line).map_err(|e| SchemaError(e.to_string()))?;
        Self::from_wire(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    pub request_id: String,
    pub outcome: ResponseOutcome,
}

impl BackendResponse {
    pub fn ok(request_id: impl Into<String>, result: ResponseResult) -> Self {
        BackendResponse {
            request_id: request_id.into(),
            outcome: ResponseOutcome::Ok(result),
        }
    }

    pub fn error(
        request_id: impl Into<String>,
        code: impl Into<String>,
        message: impl Into<String>,
        retryable: bool,
    ) -> Self {
        BackendResponse {
            request_id: request_id.into(),
            outcome: ResponseOutcome::Error(ErrorBody {
                code: code.into(),
                message: message.into(),
                retryable,
            }),
        }
    }

    pub fn to_wire(&self) -> Value {
        match &self.outcome {
            ResponseOutcome::Ok(result) => json!({
                "version": PROTOCOL_VERSION,
                "request_id": self.request_id,
                "status": "ok",
                "result": result.to_value(),
            }),
            ResponseOutcome::Error(err) => json!({
                "version": PROTOCOL_VERSION,
                "request_id": self.request_id,
                "status": "error",
                "error": err,
            }),
        }
    }

    pub fn to_line(&self) -> String {
        self.to_wire().to_string()
    }

    /// Parses and validates a response to a request of `kind`.
    pub fn from_wire(v: Value, kind: BackendKind) -> Result<Self, SchemaError> {
        let mut obj = into_object(v)?;
        check_version(&mut obj)?;
        let request_id = take_string(&mut obj, "request_id")?;
        let status = take_string(&mut obj, "status")?;
        let outcome = match status.as_str() {
            "ok" => ResponseOutcome::Ok(ResponseResult::from_value(kind, take_field(&mut obj, "result")?)?),
            "error" => ResponseOutcome::Error(typed(take_field(&mut obj, "error")?)?),
            other => return Err(SchemaError(format!("unknown status {other:?}"))),
        };
        reject_leftovers(&obj)?;
        Ok(BackendResponse { request_id, outcome })
    }

    pub fn from_line(line: &str, kind: BackendKind) -> Result<Self, SchemaError> {
        let v: Value = serde_json::from_str(line).map_err(|e| SchemaError(e.to_string()))?;
        Self::from_wire(v, kind)
    }
}
