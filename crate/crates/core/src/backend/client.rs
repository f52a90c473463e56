//! Protocol client: retries, per-endpoint concurrency caps, response
//! validation.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use super::protocol::{BackendKind, BackendRequest, BackendResponse, RequestPayload, ResponseOutcome, ResponseResult};
use super::transport::{Transport, TransportError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("backend refused request ({code}): {message}")]
    Remote { code: String, message: String },
    #[error("no endpoint configured for {0}")]
    NotConfigured(BackendKind),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(200),
            max_delay: Duration::from_secs(5),
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt` (1-based; attempt 1 never waits).
    pub fn delay_before(&self, attempt: u32) -> Duration {
        if attempt <= 1 {
            return Duration::ZERO;
        }
        let factor = 1u32.checked_shl(attempt - 2).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

struct Semaphore {
    available: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            available: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// A transport plus its concurrency cap.
pub struct Endpoint {
    label: String,
    transport: Box<dyn Transport>,
    gate: Semaphore,
}

impl Endpoint {
    pub fn new(label: impl Into<String>, transport: Box<dyn Transport>, max_concurrency: usize) -> Self {
        Endpoint {
            label: label.into(),
            transport,
            gate: Semaphore::new(max_concurrency),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Endpoint").field("label", &self.label).finish()
    }
}

enum AttemptError {
    Retryable(BackendError),
    Fatal(BackendError),
}

fn attempt(endpoint: &Endpoint, req: &BackendRequest, line: &str) -> Result<BackendResponse, AttemptError> {
    let raw = {
        let _permit = endpoint.gate.acquire();
        endpoint.transport.exchange(line)
    };
    let raw = raw.map_err(|e| match e {
        TransportError::Timeout => AttemptError::Retryable(BackendError::Timeout),
        TransportError::Io {
            message,
            retryable: true,
        } => AttemptError::Retryable(BackendError::Transport(message)),
        TransportError::Io {
            message,
            retryable: false,
        } => AttemptError::Fatal(BackendError::Transport(message)),
    })?;
    let resp = BackendResponse::from_line(raw.trim_end(), req.kind())
        .map_err(|e| AttemptError::Fatal(BackendError::SchemaViolation(e.0)))?;
    if resp.request_id != req.request_id {
        return Err(AttemptError::Fatal(BackendError::SchemaViolation(format!(
            "response id {:?} does not match request id {:?}",
            resp.request_id, req.request_id
        ))));
    }
    if let ResponseOutcome::Error(err) = &resp.outcome {
        if err.retryable {
            return Err(AttemptError::Retryable(BackendError::Remote {
                code: err.code.clone(),
                message: err.message.clone(),
            }));
        }
    }
    Ok(resp)
}

/// Sends one request with retries.
///
/// Transport failures, timeouts and error responses flagged `retryable` are
/// retried with exponential backoff up to `policy.max_attempts` attempts.
/// Schema violations are never retried. The returned response has been
/// validated against the schema for the request's kind; it may still carry
/// a non-retryable error outcome.
pub fn call(endpoint: &Endpoint, req: &BackendRequest, policy: &RetryPolicy) -> Result<BackendResponse, BackendError> {
    let line = req.to_line();
    let attempts = policy.max_attempts.max(1);
    let mut last = BackendError::Transport("no attempt made".into());
    for n in 1..=attempts {
        let delay = policy.delay_before(n);
        if !delay.is_zero() {
            thread::sleep(delay);
        }
        match attempt(endpoint, req, &line) {
            Ok(resp) => return Ok(resp),
            Err(AttemptError::Fatal(e)) => return Err(e),
            Err(AttemptError::Retryable(e)) => {
                log::debug!(
                    "{} attempt {n}/{attempts} on {} failed: {e}",
                    req.kind(),
                    endpoint.label
                );
                last = e;
            }
        }
    }
    Err(last)
}

/// Routes typed requests to per-kind endpoints.
#[derive(Clone)]
pub struct BackendClient {
    endpoints: BTreeMap<BackendKind, Arc<Endpoint>>,
    policy: RetryPolicy,
    next_id: Arc<AtomicU64>,
}

impl BackendClient {
    pub fn new(policy: RetryPolicy) -> Self {
        BackendClient {
            endpoints: BTreeMap::new(),
            policy,
            next_id: Arc::new(AtomicU64::new(1)),
        }
    }

    pub fn with_endpoint(mut self, kind: BackendKind, endpoint: Arc<Endpoint>) -> Self {
        self.endpoints.insert(kind, endpoint);
        self
    }

    pub fn set_endpoint(&mut self, kind: BackendKind, endpoint: Arc<Endpoint>) {
        self.endpoints.insert(kind, endpoint);
    }

    pub fn endpoint(&self, kind: BackendKind) -> Option<&Arc<Endpoint>> {
        self.endpoints.get(&kind)
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    /// Sends `payload` and returns its validated result; error outcomes are
    /// surfaced as [`BackendError::Remote`].
    pub fn request(&self, payload: RequestPayload) -> Result<ResponseResult, BackendError> {
        let kind = payload.kind();
        let endpoint = self.endpoints.get(&kind).ok_or(BackendError::NotConfigured(kind))?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let req = BackendRequest {
            request_id: format!("{}-{id}", kind.as_str()),
            payload,
        };
        match call(endpoint, &req, &self.policy)?.outcome {
            ResponseOutcome::Ok(result) => {
                debug_assert!(result.kind_matches(kind));
                Ok(result)
            }
            ResponseOutcome::Error(err) => Err(BackendError::Remote {
                code: err.code,
                message: err.message,
            }),
        }
    }

    /// Embeds `text` through the `embed.text` endpoint.
    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        use super::protocol::EmbedTextRequest;
        match self.request(RequestPayload::EmbedText(EmbedTextRequest { text: text.into() }))? {
            ResponseResult::Embedding(e) => Ok(e.vector),
            _ => unreachable!("validated result kind"),
        }
    }

    /// Embeds raw image bytes through the `embed.image` endpoint.
    pub fn embed_image(&self, bytes: &[u8]) -> Result<Vec<f64>, BackendError> {
        use base64::Engine;

        use super::protocol::EmbedImageRequest;
        let image_b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
        match self.request(RequestPayload::EmbedImage(EmbedImageRequest { image_b64 }))? {
            ResponseResult::Embedding(e) => Ok(e.vector),
            _ => unreachable!("validated result kind"),
        }
    }
}

impl fmt::Debug for BackendClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendClient")
            .field("endpoints", &self.endpoints)
            .field("policy", &self.policy)
            .finish()
    }
}
