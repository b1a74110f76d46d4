//! Uniform client layer for chat, embedding and POS-tagging services.
//!
//! Backends are single-attempt transports. The clients in this module wrap a
//! backend with request validation, bounded concurrency, retries with jittered
//! exponential backoff, and an append-only call log.

pub mod http;
pub mod mock;
pub mod tagger;

use std::fmt;
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use tagger::HeuristicTagger;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response after {attempts} attempts: {message}")]
    MalformedResponse { attempts: u32, message: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Failure of a single backend attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendError {
    /// Network failure or timeout; retried.
    Transport(String),
    /// HTTP 429 or equivalent; retried after backoff.
    RateLimited,
    /// Request rejected in a way retrying cannot fix.
    Fatal(String),
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendError::Transport(m) => write!(f, "transport: {m}"),
            BackendError::RateLimited => f.write_str("rate limited"),
            BackendError::Fatal(m) => write!(f, "fatal: {m}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    #[default]
    FreeText,
    JsonObject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub response_format: ResponseFormat,
}

/// Temperature for classification and translation calls.
pub const TEMPERATURE_DETERMINISTIC: f64 = 0.0;
/// Temperature for query generation.
pub const TEMPERATURE_GENERATION: f64 = 0.7;

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: TEMPERATURE_DETERMINISTIC,
            max_output_tokens: 1024,
            response_format: ResponseFormat::FreeText,
        }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn json(mut self) -> Self {
        self.response_format = ResponseFormat::JsonObject;
        self
    }

    pub fn max_output_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.system_prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("system_prompt is empty".into()));
        }
        if self.user_prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("user_prompt is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be >= 1".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("ChatRequest serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub provider_id: String,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.values, &other.values)
    }
}

/// Cosine similarity accumulated in f64; zero vectors have similarity 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PosTag {
    #[serde(rename = "NOUN")]
    Noun,
    #[serde(rename = "PROPN")]
    Propn,
    #[serde(rename = "OTHER")]
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub endpoint_url: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_max_concurrent() -> usize {
    4
}
fn default_retry_limit() -> u32 {
    3
}
fn default_backoff_base_ms() -> u64 {
    250
}
fn default_timeout_ms() -> u64 {
    60_000
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            endpoint_url: String::new(),
            api_key: None,
            max_concurrent: default_max_concurrent(),
            retry_limit: default_retry_limit(),
            backoff_base_ms: default_backoff_base_ms(),
            timeout_ms: default_timeout_ms(),
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_concurrent == 0 {
            return Err(GatewayError::InvalidRequest("max_concurrent must be >= 1".into()));
        }
        if self.retry_limit > 10 {
            return Err(GatewayError::InvalidRequest("retry_limit must be <= 10".into()));
        }
        if self.backoff_base_ms == 0 || self.timeout_ms == 0 {
            return Err(GatewayError::InvalidRequest("backoff and timeout must be positive".into()));
        }
        Ok(())
    }

    pub fn policy(&self) -> RetryPolicy {
        RetryPolicy { retry_limit: self.retry_limit, backoff_base_ms: self.backoff_base_ms }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retry_limit: u32,
    pub backoff_base_ms: u64,
}

impl RetryPolicy {
    /// No sleeping between attempts; used by the offline mocks.
    pub fn immediate(retry_limit: u32) -> Self {
        Self { retry_limit, backoff_base_ms: 0 }
    }

    fn backoff(&self, attempt: u32) {
        if self.backoff_base_ms == 0 {
            return;
        }
        let base = self.backoff_base_ms.saturating_mul(1u64 << attempt.min(16));
        let jitter = rand::thread_rng().gen_range(0..=base / 2);
        std::thread::sleep(Duration::from_millis(base + jitter));
    }
}

/// Counting semaphore that caps simultaneous in-flight backend calls.
#[derive(Debug)]
pub struct Limiter {
    cap: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_flight.lock().unwrap();
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

impl Limiter {
    pub fn new(cap: usize) -> Self {
        Self { cap: cap.max(1), in_flight: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit { limiter: self }
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Service {
    Chat,
    Embed,
    Tag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub service: Service,
    pub request_digest: String,
    pub attempt: u32,
    pub outcome: String,
}

/// Append-only, internally synchronized record of every backend attempt.
#[derive(Debug, Default)]
pub struct CallLog {
    records: Mutex<Vec<CallRecord>>,
}

impl CallLog {
    pub fn push(&self, rec: CallRecord) {
        self.records.lock().unwrap().push(rec);
    }

    pub fn snapshot(&self) -> Vec<CallRecord> {
        self.records.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError>;
}

pub trait EmbedBackend: Send + Sync {
    fn provider_id(&self) -> &str;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError>;
}

pub trait TagBackend: Send + Sync {
    fn tag(&self, tokens: &[String]) -> Result<Vec<PosTag>, BackendError>;
}

/// Locates the single JSON object in a model response, tolerating code fences
/// and surrounding prose.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let trimmed = text.trim();
    if serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(trimmed).is_ok() {
        return Some(trimmed);
    }
    let start = trimmed.find('{')?;
    let end = trimmed.rfind('}')?;
    if end <= start {
        return None;
    }
    let candidate = &trimmed[start..=end];
    serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(candidate).ok().map(|_| candidate)
}

#[derive(Clone)]
pub struct ChatClient {
    backend: Arc<dyn ChatBackend>,
    policy: RetryPolicy,
    limiter: Arc<Limiter>,
    log: Arc<CallLog>,
}

impl ChatClient {
    pub fn new(backend: Arc<dyn ChatBackend>, policy: RetryPolicy, max_concurrent: usize) -> Self {
        Self { backend, policy, limiter: Arc::new(Limiter::new(max_concurrent)), log: Arc::new(CallLog::default()) }
    }

    pub fn log(&self) -> &CallLog {
        &self.log
    }

    pub fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        req.validate()?;
        let digest = req.digest();
        let attempts = self.policy.retry_limit + 1;
        let mut last_malformed = String::new();
        let mut last_failure: Option<BackendError> = None;
        for attempt in 0..attempts {
            let result = {
                let _permit = self.limiter.acquire();
                self.backend.complete(req)
            };
            let outcome = match &result {
                Ok(_) => "ok".to_string(),
                Err(e) => e.to_string(),
            };
            match result {
                Ok(text) => match req.response_format {
                    ResponseFormat::FreeText => {
                        self.record(&digest, attempt, outcome);
                        return Ok(text);
                    }
                    ResponseFormat::JsonObject => {
                        if let Some(obj) = extract_json_object(&text) {
                            self.record(&digest, attempt, outcome);
                            return Ok(obj.to_string());
                        }
                        self.record(&digest, attempt, "malformed_json".into());
                        last_malformed = text;
                        last_failure = None;
                    }
                },
                Err(BackendError::Fatal(m)) => {
                    self.record(&digest, attempt, outcome);
                    return Err(GatewayError::Transport(m));
                }
                Err(e) => {
                    self.record(&digest, attempt, outcome);
                    last_failure = Some(e);
                    if attempt + 1 < attempts {
                        self.policy.backoff(attempt);
                    }
                }
            }
        }
        Err(match last_failure {
            Some(BackendError::RateLimited) => GatewayError::RateLimited { attempts },
            Some(e) => GatewayError::Transport(e.to_string()),
            None => GatewayError::MalformedResponse {
                attempts,
                message: format!("no JSON object in response: {}", truncate(&last_malformed, 120)),
            },
        })
    }

    fn record(&self, digest: &str, attempt: u32, outcome: String) {
        self.log.push(CallRecord {
            service: Service::Chat,
            request_digest: digest.to_string(),
            attempt: attempt + 1,
            outcome,
        });
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

#[derive(Clone)]
pub struct EmbedClient {
    backend: Arc<dyn EmbedBackend>,
    policy: RetryPolicy,
    limiter: Arc<Limiter>,
    log: Arc<CallLog>,
    max_batch: usize,
    dim: Arc<OnceLock<usize>>,
}

impl EmbedClient {
    pub fn new(backend: Arc<dyn EmbedBackend>, policy: RetryPolicy, max_concurrent: usize, max_batch: usize) -> Self {
        Self {
            backend,
            policy,
            limiter: Arc::new(Limiter::new(max_concurrent)),
            log: Arc::new(CallLog::default()),
            max_batch: max_batch.max(1),
            dim: Arc::new(OnceLock::new()),
        }
    }

    pub fn log(&self) -> &CallLog {
        &self.log
    }

    pub fn provider_id(&self) -> &str {
        self.backend.provider_id()
    }

    pub fn max_batch(&self) -> usize {
        self.max_batch
    }

    /// Embeds one batch; `texts.len()` must not exceed the configured maximum.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.len() > self.max_batch {
            return Err(GatewayError::InvalidRequest(format!(
                "batch of {} exceeds maximum {}",
                texts.len(),
                self.max_batch
            )));
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest(format!("text {i} is empty")));
        }
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let digest = hex::encode(Sha256::digest(texts.join("\u{1f}").as_bytes()));
        let attempts = self.policy.retry_limit + 1;
        let mut last = BackendError::Transport("no attempt made".into());
        for attempt in 0..attempts {
            let result = {
                let _permit = self.limiter.acquire();
                self.backend.embed_batch(texts)
            };
            self.log.push(CallRecord {
                service: Service::Embed,
                request_digest: digest.clone(),
                attempt: attempt + 1,
                outcome: result.as_ref().map(|_| "ok".to_string()).unwrap_or_else(|e| e.to_string()),
            });
            match result {
                Ok(vectors) => return self.check(texts.len(), vectors),
                Err(BackendError::Fatal(m)) => return Err(GatewayError::Transport(m)),
                Err(e) => {
                    last = e;
                    if attempt + 1 < attempts {
                        self.policy.backoff(attempt);
                    }
                }
            }
        }
        Err(match last {
            BackendError::RateLimited => GatewayError::RateLimited { attempts },
            e => GatewayError::Transport(e.to_string()),
        })
    }

    /// Embeds any number of texts by splitting into maximal batches.
    pub fn embed_all(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.max_batch) {
            out.extend(self.embed(chunk)?);
        }
        Ok(out)
    }

    fn check(&self, n: usize, vectors: Vec<Vec<f32>>) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if vectors.len() != n {
            return Err(GatewayError::Transport(format!(
                "provider returned {} vectors for {} texts",
                vectors.len(),
                n
            )));
        }
        let expected = *self.dim.get_or_init(|| vectors.first().map_or(0, Vec::len));
        for v in &vectors {
            if v.len() != expected {
                return Err(GatewayError::DimensionMismatch { expected, got: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(GatewayError::Transport("non-finite embedding value".into()));
            }
        }
        let provider = self.backend.provider_id().to_string();
        Ok(vectors.into_iter().map(|values| EmbeddingVector { values, provider_id: provider.clone() }).collect())
    }
}

/// POS tagging through an optional sidecar, with the heuristic tagger as
/// fallback when no sidecar is configured.
#[derive(Clone)]
pub struct PosTaggerClient {
    sidecar: Option<Arc<dyn TagBackend>>,
    heuristic: Arc<HeuristicTagger>,
    policy: RetryPolicy,
    log: Arc<CallLog>,
}

impl PosTaggerClient {
    pub fn heuristic() -> Self {
        Self {
            sidecar: None,
            heuristic: Arc::new(HeuristicTagger::default()),
            policy: RetryPolicy::immediate(0),
            log: Arc::new(CallLog::default()),
        }
    }

    pub fn with_sidecar(backend: Arc<dyn TagBackend>, policy: RetryPolicy) -> Self {
        Self { sidecar: Some(backend), policy, ..Self::heuristic() }
    }

    pub fn log(&self) -> &CallLog {
        &self.log
    }

    pub fn pos_tag(&self, tokens: &[String]) -> Result<Vec<PosTag>, GatewayError> {
        if tokens.is_empty() {
            return Err(GatewayError::InvalidRequest("no tokens to tag".into()));
        }
        if let Some(i) = tokens.iter().position(|t| t.is_empty()) {
            return Err(GatewayError::InvalidRequest(format!("token {i} is empty")));
        }
        let Some(sidecar) = &self.sidecar else {
            return Ok(self.heuristic.tag(tokens));
        };
        let digest = hex::encode(Sha256::digest(tokens.join("\u{1f}").as_bytes()));
        let attempts = self.policy.retry_limit + 1;
        let mut last = BackendError::Transport("no attempt made".into());
        for attempt in 0..attempts {
            let result = sidecar.tag(tokens);
            self.log.push(CallRecord {
                service: Service::Tag,
                request_digest: digest.clone(),
                attempt: attempt + 1,
                outcome: result.as_ref().map(|_| "ok".to_string()).unwrap_or_else(|e| e.to_string()),
            });
            match result {
                Ok(tags) if tags.len() == tokens.len() => return Ok(tags),
                Ok(tags) => {
                    return Err(GatewayError::Transport(format!(
                        "tagger returned {} tags for {} tokens",
                        tags.len(),
                        tokens.len()
                    )))
                }
                Err(BackendError::Fatal(m)) => return Err(GatewayError::Transport(m)),
                Err(e) => {
                    last = e;
                    if attempt + 1 < attempts {
                        self.policy.backoff(attempt);
                    }
                }
            }
        }
        Err(match last {
            BackendError::RateLimited => GatewayError::RateLimited { attempts },
            e => GatewayError::Transport(e.to_string()),
        })
    }
}

/// The three clients every pipeline stage draws from.
#[derive(Clone)]
pub struct Gateway {
    pub chat: ChatClient,
    pub embed: EmbedClient,
    pub tagger: PosTaggerClient,
}

impl Gateway {
    /// Fully offline gateway: rule-based simulated LLM, hashing embedder and
    /// heuristic tagger.
    pub fn offline(dim: usize, max_concurrent: usize) -> Self {
        Self {
            chat: ChatClient::new(Arc::new(crate::simulated::SimulatedLlm), RetryPolicy::immediate(3), max_concurrent),
            embed: EmbedClient::new(
                Arc::new(mock::HashEmbedder::new(dim)),
                RetryPolicy::immediate(3),
                max_concurrent,
                256,
            ),
            tagger: PosTaggerClient::heuristic(),
        }
    }
}
