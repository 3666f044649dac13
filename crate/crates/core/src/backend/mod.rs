//! Completion backends.
//!
//! [`Backend`] is the one interface the reasoner talks to. Three
//! implementations ship: [`HttpBackend`] for `/v1/chat/completions`-shaped
//! endpoints, [`ScriptedBackend`] for offline tests, and [`CachedBackend`]
//! which records and replays completions keyed by [`cache_key`].

mod cache;
mod http;
mod scripted;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheMode, CacheStore, CachedBackend};
pub use http::{HttpBackend, HttpResponse, RetryPolicy, Transport, UreqTransport};
pub use scripted::{PromptMatcher, ScriptEntry, ScriptFile, ScriptedBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub n_samples: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_name: String,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            n_samples: 1,
            temperature: 0.0,
            max_tokens: 512,
            model_name: model_name.into(),
            stop_sequences: Vec::new(),
        }
    }

    pub fn with_samples(mut self, n: u32) -> Self {
        self.n_samples = n;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.n_samples == 0 {
            return Err(BackendError::InvalidRequest(
                "n_samples must be >= 1".into(),
            ));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be finite and non-negative, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest(
                "max_tokens must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl Completion {
    pub fn stop(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            usage: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited{}", .after.map(|d| format!(", retry after {}s", d.as_secs_f64())).unwrap_or_default())]
    RateLimited { after: Option<Duration> },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no script registered for prompt digest {digest}{}", .nearest.as_ref().map(|n| format!(" (nearest registered: {n})")).unwrap_or_default())]
    ScriptMiss {
        digest: String,
        nearest: Option<String>,
    },
    #[error("conflicting script already registered for prompt digest {0}")]
    DuplicateScript(String),
    #[error("replay cache has no entry for {0}")]
    CacheMiss(String),
    #[error("cache i/o error: {0}")]
    Cache(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_) | BackendError::RateLimited { .. }
        )
    }
}

/// A source of completions. Implementations must be callable concurrently.
pub trait Backend: Send + Sync {
    /// Returns exactly `request.n_samples` completions or an error.
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, BackendError>;

    /// Short identifier used in run fingerprints.
    fn kind(&self) -> &str;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, BackendError> {
        (**self).complete(request)
    }

    fn kind(&self) -> &str {
        (**self).kind()
    }
}

/// Field-ordered mirror of [`CompletionRequest`] used for hashing. Keys are in
/// lexicographic order so the JSON bytes are canonical.
#[derive(Serialize)]
struct CanonicalRequest<'a> {
    max_tokens: u32,
    model_name: &'a str,
    n_samples: u32,
    prompt: &'a str,
    stop_sequences: &'a [String],
    temperature: f64,
}

/// Canonical byte serialization hashed by [`cache_key`].
pub fn canonical_bytes(request: &CompletionRequest) -> Vec<u8> {
    serde_json::to_vec(&CanonicalRequest {
        max_tokens: request.max_tokens,
        model_name: &request.model_name,
        n_samples: request.n_samples,
        prompt: &request.prompt,
        stop_sequences: &request.stop_sequences,
        temperature: request.temperature,
    })
    .expect("canonical request serializes")
}

/// Hex SHA-256 over [`canonical_bytes`].
pub fn cache_key(request: &CompletionRequest) -> String {
    sha256_hex(&canonical_bytes(request))
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a bare prompt, used by scripted matchers.
pub fn prompt_digest(prompt: &str) -> String {
    sha256_hex(prompt.as_bytes())
}
