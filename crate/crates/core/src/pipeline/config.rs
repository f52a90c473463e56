//! Pipeline configuration: a TOML file, `SURGFORGE_*` environment
//! overrides, then command-line flags, in increasing precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompts::PromptPaths;
use super::PipelineError;
use crate::backend::{connect, BackendClient, BackendKind, ConnectOptions, EndpointSpec, MockBackend, RetryPolicy};
use crate::enrichment::DEFAULT_CONTEXT_WINDOW;
use crate::filtering::{ClipDecision, DEFAULT_FRAMES_PER_CLIP, DEFAULT_VOTE_THRESHOLD};

pub const ENV_PREFIX: &str = "SURGFORGE_";

/// The ablation switches. `dmf` gates both filters; `visual_filter` and
/// `textual_filter` switch one modality off while the other stays on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub mlsc: bool,
    pub dmf: bool,
    pub visual_filter: bool,
    pub textual_filter: bool,
    pub ce: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles {
            mlsc: true,
            dmf: true,
            visual_filter: true,
            textual_filter: true,
            ce: true,
        }
    }
}

impl StageToggles {
    pub fn visual(&self) -> bool {
        self.dmf && self.visual_filter
    }

    pub fn textual(&self) -> bool {
        self.dmf && self.textual_filter
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub n_frames: usize,
    pub vote_threshold: f64,
    pub decision: ClipDecision,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            n_frames: DEFAULT_FRAMES_PER_CLIP,
            vote_threshold: DEFAULT_VOTE_THRESHOLD,
            decision: ClipDecision::MajorityVote,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichSettings {
    pub context_window: usize,
}

impl Default for EnrichSettings {
    fn default() -> Self {
        EnrichSettings {
            context_window: DEFAULT_CONTEXT_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaxonomySettings {
    /// Taxonomy tree file; the bundled tree when absent.
    pub tree: Option<PathBuf>,
    pub summary_chars: usize,
}

impl Default for TaxonomySettings {
    fn default() -> Self {
        TaxonomySettings {
            tree: None,
            summary_chars: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    /// Endpoint per backend kind (`embed.text`, ...): `mock`,
    /// `http://...` or `pipe:<command>`.
    pub endpoints: BTreeMap<String, String>,
    pub timeout_ms: u64,
    pub max_concurrency: usize,
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    /// Environment variable holding a bearer token for HTTP endpoints.
    pub bearer_token_env: Option<String>,
}

impl Default for BackendSettings {
    fn default() -> Self {
        BackendSettings {
            endpoints: BTreeMap::new(),
            timeout_ms: 120_000,
            max_concurrency: 4,
            max_attempts: 3,
            base_delay_ms: 200,
            max_delay_ms: 5_000,
            bearer_token_env: Some("SURGFORGE_BEARER_TOKEN".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSettings {
    pub corpus: Option<PathBuf>,
    pub work_dir: Option<PathBuf>,
    pub ffmpeg: String,
}

impl Default for PathSettings {
    fn default() -> Self {
        PathSettings {
            corpus: None,
            work_dir: None,
            ffmpeg: "ffmpeg".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workers: usize,
    /// Route every backend kind to the in-process mock.
    pub mock: bool,
    pub stages: StageToggles,
    pub filtering: FilterSettings,
    pub enrichment: EnrichSettings,
    pub taxonomy: TaxonomySettings,
    pub backend: BackendSettings,
    pub prompts: PromptPaths,
    pub paths: PathSettings,
    /// Directory that relative paths in the file are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            workers: 4,
            mock: false,
            stages: StageToggles::default(),
            filtering: FilterSettings::default(),
            enrichment: EnrichSettings::default(),
            taxonomy: TaxonomySettings::default(),
            backend: BackendSettings::default(),
            prompts: PromptPaths::default(),
            paths: PathSettings::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn parse_env<T: std::str::FromStr>(name: &str, value: &str) -> Result<T, PipelineError> {
    value
        .trim()
        .parse()
        .map_err(|_| PipelineError::Config(format!("{name}={value:?} does not parse")))
}

fn parse_bool(name: &str, value: &str) -> Result<bool, PipelineError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(PipelineError::Config(format!("{name}={value:?} is not a boolean"))),
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Parses a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg =
            Self::from_toml_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if cfg.base_dir.as_os_str().is_empty() {
            cfg.base_dir = PathBuf::from(".");
        }
        let base = cfg.base_dir.clone();
        for p in [&mut cfg.paths.corpus, &mut cfg.paths.work_dir, &mut cfg.taxonomy.tree]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Applies `SURGFORGE_*` overrides read through `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), PipelineError> {
        let var = |suffix: &str| {
            let name = format!("{ENV_PREFIX}{suffix}");
            lookup(&name).map(|v| (name, v))
        };
        if let Some((n, v)) = var("SEED") {
            self.seed = parse_env(&n, &v)?;
        }
        if let Some((n, v)) = var("WORKERS") {
            self.workers = parse_env(&n, &v)?;
        }
        if let Some((n, v)) = var("MOCK") {
            self.mock = parse_bool(&n, &v)?;
        }
        if let Some((_, v)) = var("CORPUS") {
            self.paths.corpus = Some(PathBuf::from(v));
        }
        if let Some((_, v)) = var("WORK_DIR") {
            self.paths.work_dir = Some(PathBuf::from(v));
        }
        if let Some((_, v)) = var("FFMPEG") {
            self.paths.ffmpeg = v;
        }
        if let Some((n, v)) = var("N_FRAMES") {
            self.filtering.n_frames = parse_env(&n, &v)?;
        }
        if let Some((n, v)) = var("VOTE_THRESHOLD") {
            self.filtering.vote_threshold = parse_env(&n, &v)?;
        }
        if let Some((n, v)) = var("CONTEXT_WINDOW") {
            self.enrichment.context_window = parse_env(&n, &v)?;
        }
        for kind in BackendKind::ALL {
            if let Some((_, v)) = var(&format!("ENDPOINT_{}", kind.env_suffix())) {
                self.backend.endpoints.insert(kind.as_str().to_string(), v);
            }
        }
        Ok(())
    }

    pub fn apply_process_env(&mut self) -> Result<(), PipelineError> {
        self.apply_env(|name| std::env::var(name).ok())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        let t = self.filtering.vote_threshold;
        if !(t > 0.0 && t < 1.0) {
            return bad(format!("vote_threshold must lie in (0, 1), got {t}"));
        }
        if self.filtering.n_frames == 0 {
            return bad("n_frames must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.backend.max_concurrency == 0 || self.backend.max_attempts == 0 {
            return bad("max_concurrency and max_attempts must be at least 1".into());
        }
        for (kind, spec) in &self.backend.endpoints {
            if BackendKind::parse(kind).is_none() {
                return bad(format!("unknown backend kind {kind:?}"));
            }
            if EndpointSpec::parse(spec).is_none() {
                return bad(format!(
                    "endpoint for {kind} is not mock, http(s):// or pipe: ({spec:?})"
                ));
            }
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.backend.max_attempts,
            base_delay: Duration::from_millis(self.backend.base_delay_ms),
            max_delay: Duration::from_millis(self.backend.max_delay_ms),
        }
    }

    /// Endpoint spec string per kind after the mock switch; kinds without
    /// one are absent.
    pub fn resolved_endpoints(&self) -> BTreeMap<BackendKind, String> {
        BackendKind::ALL
            .into_iter()
            .filter_map(|kind| {
                let spec = if self.mock {
                    Some("mock".to_string())
                } else {
                    self.backend.endpoints.get(kind.as_str()).cloned()
                };
                spec.map(|s| (kind, s.trim().to_string()))
            })
            .collect()
    }

    /// One endpoint per distinct spec, shared by the kinds routed to it so
    /// that its concurrency cap covers all of them.
    pub fn build_client(&self) -> Result<BackendClient, PipelineError> {
        let opts = ConnectOptions {
            timeout: Duration::from_millis(self.backend.timeout_ms),
            max_concurrency: self.backend.max_concurrency,
            bearer_token: self
                .backend
                .bearer_token_env
                .as_deref()
                .and_then(|name| std::env::var(name).ok()),
        };
        let mock = MockBackend::default();
        let mut client = BackendClient::new(self.retry_policy());
        let mut shared = BTreeMap::new();
        for (kind, spec) in self.resolved_endpoints() {
            let parsed = EndpointSpec::parse(&spec)
                .ok_or_else(|| PipelineError::Config(format!("bad endpoint for {kind}: {spec:?}")))?;
            let endpoint = shared
                .entry(spec)
                .or_insert_with(|| Arc::new(connect(&parsed, &mock, &opts)))
                .clone();
            client.set_endpoint(kind, endpoint);
        }
        Ok(client)
    }

    /// `path` resolved against the config's base directory.
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}
