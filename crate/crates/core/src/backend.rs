//! Completion backend contract shared by the planner and the executor.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl CompletionRequest {
    /// Temperature 0, 256 tokens, no stop sequences.
    pub fn new(prompt: impl Into<String>) -> Self {
        CompletionRequest { prompt: prompt.into(), temperature: 0.0, max_tokens: 256, stop: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be at least 1"));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest("temperature must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(&'static str),
    #[error("no scripted rule matched the prompt")]
    NoRouteMatched,
    #[error("request timed out")]
    Timeout,
    #[error("backend returned HTTP {status}")]
    HttpStatus { status: u16, retry_after_secs: Option<u64> },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("backend unreachable: {0}")]
    Unavailable(String),
}

impl BackendError {
    /// Failures that mean the service could not be reached at all.
    pub fn is_connectivity(&self) -> bool {
        matches!(self, BackendError::Timeout | BackendError::Unavailable(_))
    }
}

/// A language-model completion service.
pub trait CompletionBackend {
    /// Stable identifier recorded as memory provenance.
    fn backend_id(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for alloc::boxed::Box<B> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for alloc::sync::Arc<B> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}
