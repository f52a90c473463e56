//! Line transports. A transport moves one request line out and one response
//! line back; it knows nothing about schemas.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("{message}")]
    Io { message: String, retryable: bool },
    #[error("timed out")]
    Timeout,
}

impl TransportError {
    pub fn transient(message: impl Into<String>) -> Self {
        TransportError::Io {
            message: message.into(),
            retryable: true,
        }
    }

    pub fn permanent(message: impl Into<String>) -> Self {
        TransportError::Io {
            message: message.into(),
            retryable: false,
        }
    }
}

pub trait Transport: Send + Sync {
    /// Sends one request line (no trailing newline) and returns one response
    /// line.
    fn exchange(&self, line: &str) -> Result<String, TransportError>;
}

/// Where an endpoint lives, parsed from a config string:
/// `mock`, `http://host:port/path`, or `pipe:<shell command>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EndpointSpec {
    Mock,
    Http(String),
    Pipe(String),
}

impl EndpointSpec {
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if s == "mock" {
            Some(EndpointSpec::Mock)
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Some(EndpointSpec::Http(s.to_string()))
        } else if let Some(cmd) = s.strip_prefix("pipe:") {
            let cmd = cmd.trim();
            (!cmd.is_empty()).then(|| EndpointSpec::Pipe(cmd.to_string()))
        } else {
            None
        }
    }
}

/// POSTs each request line as a JSON body and reads the response body.
pub struct HttpTransport {
    url: String,
    bearer_token: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, timeout: Duration, bearer_token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        HttpTransport {
            url: url.into(),
            bearer_token,
            agent,
        }
    }
}

impl Transport for HttpTransport {
    fn exchange(&self, line: &str) -> Result<String, TransportError> {
        let mut req = self.agent.post(&self.url).content_type("application/json");
        if let Some(token) = &self.bearer_token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send(line).map_err(map_ureq_error)?;
        let status = resp.status().as_u16();
        if status >= 500 || status == 429 {
            return Err(TransportError::transient(format!("HTTP status {status}")));
        }
        if status >= 400 {
            return Err(TransportError::permanent(format!("HTTP status {status}")));
        }
        resp.body_mut().read_to_string().map_err(map_ureq_error)
    }
}

fn map_ureq_error(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => TransportError::Timeout,
        ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            TransportError::transient(e.to_string())
        }
        other => TransportError::permanent(other.to_string()),
    }
}

struct PipeState {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Talks to a long-running child process over stdin/stdout, one line per
/// message. Requests are serialized; the child is restarted after an I/O
/// failure.
pub struct PipeTransport {
    command: String,
    state: Mutex<Option<PipeState>>,
}

impl PipeTransport {
    pub fn new(command: impl Into<String>) -> Self {
        PipeTransport {
            command: command.into(),
            state: Mutex::new(None),
        }
    }

    fn spawn(&self) -> Result<PipeState, TransportError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| TransportError::permanent(format!("cannot spawn {:?}: {e}", self.command)))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(PipeState { child, stdin, stdout })
    }
}

impl Transport for PipeTransport {
    fn exchange(&self, line: &str) -> Result<String, TransportError> {
        let mut guard = self.state.lock().unwrap();
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let state = guard.as_mut().unwrap();
        let result = (|| {
            state.stdin.write_all(line.as_bytes())?;
            state.stdin.write_all(b"\n")?;
            state.stdin.flush()?;
            let mut out = String::new();
            let n = state.stdout.read_line(&mut out)?;
            if n == 0 {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    "endpoint process closed its output",
                ));
            }
            Ok(out)
        })();
        match result {
            Ok(out) => Ok(out),
            Err(e) => {
                if let Some(mut dead) = guard.take() {
                    let _ = dead.child.kill();
                    let _ = dead.child.wait();
                }
                Err(TransportError::transient(e.to_string()))
            }
        }
    }
}

impl Drop for PipeTransport {
    fn drop(&mut self) {
        if let Ok(mut guard) = self.state.lock() {
            if let Some(mut st) = guard.take() {
                let _ = st.child.kill();
                let _ = st.child.wait();
            }
        }
    }
}
