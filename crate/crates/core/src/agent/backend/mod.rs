//! Model backends.
//!
//! A backend turns a prompt plus an ordered list of images into text. The
//! mock and oracle backends are deterministic test doubles; the HTTP
//! backend talks to an OpenAI-compatible chat-completions endpoint; the
//! replay backend answers from recorded transcripts.

#[cfg(feature = "http")]
mod http;
mod mock;
mod oracle;
mod replay;

#[cfg(feature = "http")]
pub use http::{chat_request_body, extract_reply_text, HttpBackend};
pub use mock::{MockBackend, MockReply};
pub use oracle::{OracleBackend, OracleScores};
pub use replay::ReplayBackend;

use std::fmt;
use std::str::FromStr;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::protocol::Assessment;
use crate::dataset::AreaImage;

/// Tool id used for the single-call staged pipeline.
pub const PIPELINE_TOOL_ID: &str = "pipeline";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Oracle,
    Http,
    Replay,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Mock => "mock",
            BackendKind::Oracle => "oracle",
            BackendKind::Http => "http",
            BackendKind::Replay => "replay",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mock" => Ok(BackendKind::Mock),
            "oracle" => Ok(BackendKind::Oracle),
            "http" => Ok(BackendKind::Http),
            "replay" => Ok(BackendKind::Replay),
            other => Err(format!("unknown backend {other:?} (expected mock, oracle, http or replay)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Base URL of the chat-completions API, e.g. `http://localhost:8000/v1`.
    pub endpoint: Option<String>,
    pub model: String,
    pub timeout_ms: u64,
    /// Extra attempts after the first, both for transient transport
    /// failures and for unreadable responses.
    pub max_retries: u32,
    pub temperature: f64,
    /// Base delay of the exponential backoff between transport retries.
    pub backoff_ms: u64,
    /// Upper bound on concurrent backend calls.
    pub max_parallel: usize,
    /// Minimum spacing between call starts.
    pub min_interval_ms: u64,
    /// Never read from or written to config files; supplied through the
    /// environment.
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Oracle,
            endpoint: None,
            model: "default".into(),
            timeout_ms: 60_000,
            max_retries: 3,
            temperature: 0.0,
            backoff_ms: 500,
            max_parallel: 4,
            min_interval_ms: 0,
            api_key: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_ms == 0 {
            return Err("backend.timeout_ms must be positive".into());
        }
        if self.max_parallel == 0 {
            return Err("backend.max_parallel must be at least 1".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("backend.temperature must be a finite non-negative number, got {}", self.temperature));
        }
        if self.kind == BackendKind::Http && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return Err("backend.endpoint is required for the http backend".into());
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

/// One transport-level attempt inside a single backend call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    pub number: u32,
    pub elapsed_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    pub outcome: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackendReply {
    pub text: String,
    pub attempts: Vec<Attempt>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendErrorKind {
    Timeout,
    ExhaustedRetries,
    Transport,
    /// Non-retryable HTTP status.
    Rejected,
    /// An input image or record could not be found.
    Unresolvable,
    /// Injected by a test double.
    Scripted,
}

impl fmt::Display for BackendErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendErrorKind::Timeout => "timeout",
            BackendErrorKind::ExhaustedRetries => "exhausted retries",
            BackendErrorKind::Transport => "transport failure",
            BackendErrorKind::Rejected => "request rejected",
            BackendErrorKind::Unresolvable => "unresolvable input",
            BackendErrorKind::Scripted => "scripted failure",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
#[error("{kind}: {message}")]
pub struct BackendError {
    pub kind: BackendErrorKind,
    pub message: String,
    pub attempts: Vec<Attempt>,
}

impl BackendError {
    pub fn new(kind: BackendErrorKind, message: impl Into<String>) -> Self {
        BackendError { kind, message: message.into(), attempts: Vec::new() }
    }
}

/// Everything a backend sees for one call.
#[derive(Clone, Copy, Debug)]
pub struct BackendRequest<'a> {
    pub area_id: &'a str,
    pub tool_id: &'a str,
    pub prompt: &'a str,
    pub images: &'a [AreaImage],
    pub references: &'a [Assessment],
    /// 1-based protocol attempt (re-prompts after unreadable answers).
    pub attempt: u32,
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn invoke(&self, req: &BackendRequest<'_>) -> Result<BackendReply, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }

    fn invoke(&self, req: &BackendRequest<'_>) -> Result<BackendReply, BackendError> {
        (**self).invoke(req)
    }
}

/// Bounds concurrency and spaces out call starts for a wrapped backend.
pub struct Throttled<B> {
    inner: B,
    max_parallel: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    min_interval: Duration,
    next_start: Mutex<Option<Instant>>,
}

impl<B: Backend> Throttled<B> {
    pub fn new(inner: B, max_parallel: usize, min_interval: Duration) -> Self {
        Throttled {
            inner,
            max_parallel: max_parallel.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            min_interval,
            next_start: Mutex::new(None),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

struct Permit<'a> {
    count: &'a Mutex<usize>,
    freed: &'a Condvar,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.count.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.freed.notify_one();
    }
}

impl<B: Backend> Backend for Throttled<B> {
    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }

    fn invoke(&self, req: &BackendRequest<'_>) -> Result<BackendReply, BackendError> {
        let _permit = {
            let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
            while *n >= self.max_parallel {
                n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
            }
            *n += 1;
            Permit { count: &self.in_flight, freed: &self.freed }
        };
        if !self.min_interval.is_zero() {
            let wait = {
                let mut next = self.next_start.lock().unwrap_or_else(|e| e.into_inner());
                let now = Instant::now();
                let start = next.map_or(now, |t| t.max(now));
                *next = Some(start + self.min_interval);
                start - now
            };
            std::thread::sleep(wait);
        }
        self.inner.invoke(req)
    }
}
