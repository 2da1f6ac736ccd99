//! Decoder and black-box model endpoints, prompt templates, and the
//! instruction-scoring environment built on them.

mod blackbox;
mod decoder;
mod environment;
mod templates;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use blackbox::{antonym_table, BlackBox, BlackBoxConfig};
pub use decoder::{default_grammar, Decoder, DecoderConfig, MockDecoder, PhraseGrammar};
pub use environment::{evaluate_instruction, LlmEnvironment, LlmEnvironmentConfig};
pub use templates::{clean_instruction, PromptTemplates};

use crate::scoring::ScoreError;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Scoring(#[from] ScoreError),
    #[error("evaluation aborted at example {failed} of {total} ({completed} completed): {source}")]
    PartialEvaluation {
        completed: usize,
        failed: usize,
        total: usize,
        source: Box<LlmError>,
    },
    #[error("audit log: {0}")]
    Audit(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LlmError>;

/// Bounded retries with exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            initial_backoff_ms: 500,
            max_backoff_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Wait before attempt `attempt + 1` (attempts count from 1).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(20);
        Duration::from_millis(
            self.initial_backoff_ms
                .saturating_mul(factor)
                .min(self.max_backoff_ms),
        )
    }
}

pub(crate) enum Failure {
    /// Worth another attempt, optionally after a server-requested delay.
    Retry(String, Option<Duration>),
    Fatal(LlmError),
}

pub(crate) fn with_retry<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut() -> std::result::Result<T, Failure>,
) -> Result<T> {
    let attempts = policy.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 1..=attempts {
        match op() {
            Ok(v) => return Ok(v),
            Err(Failure::Fatal(e)) => return Err(e),
            Err(Failure::Retry(msg, wait)) => {
                log::warn!("attempt {attempt}/{attempts} failed: {msg}");
                last = msg;
                if attempt < attempts {
                    let wait = wait
                        .map(|w| w.min(Duration::from_millis(policy.max_backoff_ms)))
                        .unwrap_or_else(|| policy.backoff(attempt));
                    std::thread::sleep(wait);
                }
            }
        }
    }
    Err(LlmError::Transport {
        attempts,
        message: last,
    })
}

pub(crate) fn classify(err: reqwest::Error) -> Failure {
    if err.is_timeout() || err.is_connect() || err.is_request() {
        Failure::Retry(err.to_string(), None)
    } else {
        Failure::Fatal(LlmError::Protocol(err.to_string()))
    }
}

/// Maps a response status to success, a retryable failure, or a hard error.
pub(crate) fn check_status(
    resp: reqwest::blocking::Response,
) -> std::result::Result<reqwest::blocking::Response, Failure> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let retry_after = resp
        .headers()
        .get(reqwest::header::RETRY_AFTER)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(Duration::from_secs);
    let body = resp.text().unwrap_or_default();
    if status.as_u16() == 429 || status.is_server_error() {
        Err(Failure::Retry(
            format!("HTTP {status}: {body}"),
            retry_after,
        ))
    } else {
        Err(Failure::Fatal(LlmError::Status {
            status: status.as_u16(),
            body,
        }))
    }
}

/// Append-only JSONL record of every endpoint exchange.
#[derive(Debug)]
pub struct AuditLog {
    out: Mutex<BufWriter<File>>,
}

impl AuditLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(AuditLog {
            out: Mutex::new(BufWriter::new(File::create(path)?)),
        })
    }

    pub fn record(
        &self,
        endpoint: &str,
        request: &serde_json::Value,
        response: &serde_json::Value,
    ) -> Result<()> {
        let line = serde_json::json!({
            "endpoint": endpoint,
            "request": request,
            "response": response,
        });
        let mut out = self.out.lock().expect("audit lock poisoned");
        writeln!(out, "{line}")?;
        out.flush()?;
        Ok(())
    }
}
