//! Chat-completions and embeddings clients over HTTP.
//!
//! Both share one transport: a bounded pool of in-flight requests, a
//! per-request timeout, retries on timeouts, connection failures, 429 and 5xx
//! (honouring `Retry-After`), and an audit trail of every attempt.

use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rap_core::{BackendError, CompletionBackend, CompletionRequest, Embedding, EmbeddingError, EmbeddingProvider};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpSettings {
    pub url: String,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub backoff_base: Duration,
    /// Upper bound on any single wait between attempts.
    pub max_retry_wait: Duration,
}

impl HttpSettings {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpSettings {
            url: url.into(),
            model: model.into(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            max_in_flight: 4,
            backoff_base: Duration::from_millis(500),
            max_retry_wait: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub request_id: u64,
    pub attempt: u32,
    pub url: String,
    pub status: Option<u16>,
    pub latency_ms: f64,
    pub error: Option<String>,
    pub request_chars: usize,
}

#[derive(Debug, Default)]
pub struct AuditLog {
    records: Mutex<Vec<AuditRecord>>,
}

impl AuditLog {
    pub fn push(&self, record: AuditRecord) {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).push(record);
    }

    pub fn records(&self) -> Vec<AuditRecord> {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn write_jsonl(&self, path: &Path) -> io::Result<()> {
        let mut out = io::BufWriter::new(fs::File::create(path)?);
        for r in self.records() {
            serde_json::to_writer(&mut out, &r)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Gate { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

struct Transport {
    agent: ureq::Agent,
    settings: HttpSettings,
    token: Option<String>,
    gate: Gate,
    audit: Arc<AuditLog>,
    sleeper: Sleeper,
    next_id: AtomicU64,
}

fn retry_after(resp: &ureq::http::Response<ureq::Body>) -> Option<u64> {
    resp.headers().get("retry-after")?.to_str().ok()?.trim().parse().ok()
}

impl Transport {
    fn new(settings: HttpSettings, token: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(settings.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Transport {
            agent,
            gate: Gate::new(settings.max_in_flight),
            settings,
            token,
            audit: Arc::new(AuditLog::default()),
            sleeper: Arc::new(std::thread::sleep),
            next_id: AtomicU64::new(1),
        }
    }

    fn attempt(&self, body: &Value) -> (Result<Value, BackendError>, Option<u16>, bool) {
        let mut req = self.agent.post(&self.settings.url).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if (200..300).contains(&status) {
                    let parsed = resp
                        .body_mut()
                        .read_json::<Value>()
                        .map_err(|e| BackendError::MalformedResponse(e.to_string()));
                    (parsed, Some(status), false)
                } else {
                    let retryable = status == 429 || status >= 500;
                    let err = BackendError::HttpStatus { status, retry_after_secs: retry_after(&resp) };
                    (Err(err), Some(status), retryable)
                }
            }
            Err(ureq::Error::Timeout(_)) => (Err(BackendError::Timeout), None, true),
            Err(e @ (ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound)) => {
                (Err(BackendError::Unavailable(e.to_string())), None, true)
            }
            Err(e) => (Err(BackendError::Unavailable(e.to_string())), None, false),
        }
    }

    fn post(&self, body: &Value, request_chars: usize) -> Result<Value, BackendError> {
        let request_id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut attempt = 0;
        loop {
            let started = Instant::now();
            let (result, status) = {
                let _permit = self.gate.acquire();
                let (r, s, retryable) = self.attempt(body);
                (r.map_err(|e| (e, retryable)), s)
            };
            self.audit.push(AuditRecord {
                request_id,
                attempt,
                url: self.settings.url.clone(),
                status,
                latency_ms: started.elapsed().as_secs_f64() * 1000.0,
                error: result.as_ref().err().map(|(e, _)| e.to_string()),
                request_chars,
            });
            let (err, retryable) = match result {
                Ok(v) => return Ok(v),
                Err(e) => e,
            };
            if !retryable || attempt >= self.settings.max_retries {
                return Err(err);
            }
            let wait = match &err {
                BackendError::HttpStatus { retry_after_secs: Some(s), .. } => Duration::from_secs(*s),
                _ => self.settings.backoff_base.saturating_mul(1 << attempt.min(16)),
            };
            (self.sleeper)(wait.min(self.settings.max_retry_wait));
            attempt += 1;
        }
    }
}

/// Client for the de-facto chat-completions schema. The prompt is sent as a
/// single user message.
pub struct HttpChatBackend {
    id: String,
    transport: Transport,
}

impl HttpChatBackend {
    pub fn new(id: impl Into<String>, settings: HttpSettings, token: Option<String>) -> Self {
        HttpChatBackend { id: id.into(), transport: Transport::new(settings, token) }
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.transport.sleeper = sleeper;
        self
    }

    pub fn audit(&self) -> Arc<AuditLog> {
        self.transport.audit.clone()
    }

    pub fn request_body(&self, request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.transport.settings.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if !request.stop.is_empty() {
            body["stop"] = json!(request.stop);
        }
        body
    }
}

impl CompletionBackend for HttpChatBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        request.validate()?;
        let value = self.transport.post(&self.request_body(request), request.prompt.len())?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::MalformedResponse("missing choices[0].message.content".into()))
    }
}

/// Remote text encoder: `{model, input: [..]}` in, `{data: [{embedding}]}` out.
pub struct HttpEmbedder {
    id: String,
    dim: usize,
    transport: Transport,
}

impl HttpEmbedder {
    pub fn new(settings: HttpSettings, dim: usize, token: Option<String>) -> Self {
        HttpEmbedder { id: format!("http-{}-d{dim}", settings.model), dim, transport: Transport::new(settings, token) }
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.transport.sleeper = sleeper;
        self
    }

    pub fn audit(&self) -> Arc<AuditLog> {
        self.transport.audit.clone()
    }

    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbeddingError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbeddingError::EmptyInput);
        }
        let body = json!({"model": self.transport.settings.model, "input": texts});
        let chars = texts.iter().map(|t| t.len()).sum();
        let value = self.transport.post(&body, chars).map_err(|e| EmbeddingError::ProviderUnavailable(e.to_string()))?;
        let malformed = || EmbeddingError::ProviderUnavailable("malformed embeddings response".into());
        let data = value.get("data").and_then(Value::as_array).ok_or_else(malformed)?;
        if data.len() != texts.len() {
            return Err(malformed());
        }
        data.iter()
            .map(|item| {
                let values: Vec<f64> = item
                    .get("embedding")
                    .and_then(Value::as_array)
                    .ok_or_else(malformed)?
                    .iter()
                    .map(|v| v.as_f64().ok_or_else(malformed))
                    .collect::<Result<_, _>>()?;
                if values.len() != self.dim {
                    return Err(EmbeddingError::DimensionMismatch { left: self.dim, right: values.len() });
                }
                Embedding::new(values)
            })
            .collect()
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }
}
