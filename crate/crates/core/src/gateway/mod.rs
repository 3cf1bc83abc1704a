//! Uniform access to chat-completion backends.
//!
//! A [`Gateway`] wraps a [`Backend`] with content-addressed caching
//! (cassettes), record/replay, retries with exponential backoff and a hard
//! bound on in-flight backend calls.

mod cassette;
mod http;
mod limiter;
mod mock;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::PromptChain;

pub use cassette::{CassetteEntry, CassetteStore};
pub use http::{HttpBackend, API_KEY_VARS};
pub use limiter::{InflightLimiter, Permit};
pub use mock::{FnMock, MockVerdicts, NormOracleMock, ScoreMapping, ScriptedMock};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            model_name: "gpt-4-0125-preview".into(),
            temperature: 0.0,
            top_p: 0.95,
            max_tokens: crate::prompt::LEMMA_MAX_TOKENS,
        }
    }
}

impl ModelParams {
    pub fn is_valid(&self) -> bool {
        self.temperature >= 0.0
            && self.temperature.is_finite()
            && self.top_p > 0.0
            && self.top_p <= 1.0
            && self.max_tokens > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Author {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub author: Author,
    pub text: String,
}

impl Message {
    pub fn user(text: impl Into<String>) -> Self {
        Message {
            author: Author::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Message {
            author: Author::Assistant,
            text: text.into(),
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Message {
            author: Author::System,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinishReason {
    Stop,
    /// The backend hit max_tokens; the text may be truncated.
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
    pub from_cache: bool,
    pub digest: CacheKey,
}

/// SHA-256 over the canonical JSON of the model parameters and messages.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(String);

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model_name: &'a str,
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    messages: &'a [Message],
}

impl CacheKey {
    pub fn compute(params: &ModelParams, messages: &[Message]) -> CacheKey {
        let material = KeyMaterial {
            model_name: &params.model_name,
            temperature: params.temperature,
            top_p: params.top_p,
            max_tokens: params.max_tokens,
            messages,
        };
        let bytes = serde_json::to_vec(&material).expect("key material serializes");
        CacheKey(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn from_hex(hex: impl Into<String>) -> CacheKey {
        CacheKey(hex.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn short(&self) -> &str {
        &self.0[..self.0.len().min(12)]
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    /// Every call goes to the backend.
    Live,
    /// Cassette hits are served locally; misses go to the backend and are stored.
    Record,
    /// Only cassette hits; a miss is an error and the backend is never touched.
    Replay,
    /// In-process scripted backend, no cassette.
    Mock,
}

impl std::str::FromStr for GatewayMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(GatewayMode::Live),
            "record" => Ok(GatewayMode::Record),
            "replay" => Ok(GatewayMode::Replay),
            "mock" => Ok(GatewayMode::Mock),
            other => Err(format!("unknown gateway mode '{other}'")),
        }
    }
}

impl fmt::Display for GatewayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GatewayMode::Live => "live",
            GatewayMode::Record => "record",
            GatewayMode::Replay => "replay",
            GatewayMode::Mock => "mock",
        })
    }
}

/// Reply from a backend before gateway bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub text: String,
    pub finish_reason: FinishReason,
}

impl BackendReply {
    pub fn stop(text: impl Into<String>) -> Self {
        BackendReply {
            text: text.into(),
            finish_reason: FinishReason::Stop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    /// Transport failure or 5xx/429; retried.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    /// The backend answered with an error that retrying will not fix.
    #[error("backend error: {0}")]
    Rejected(String),
}

pub trait Backend: Send + Sync {
    fn send(&self, messages: &[Message], params: &ModelParams) -> Result<BackendReply, BackendError>;
}

#[derive(Debug, Error)]
pub enum GatewayErrorKind {
    #[error("history must be nonempty and end with a user message")]
    InvalidHistory,
    #[error("cache miss in replay mode")]
    CacheMiss,
    #[error("no backend configured for {0} mode")]
    NoBackend(GatewayMode),
    #[error("network failure after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("{0}")]
    Auth(String),
    #[error("{0}")]
    Backend(String),
    #[error("cassette error: {0}")]
    Cassette(String),
}

#[derive(Debug, Error)]
#[error("{kind} [key {key}]")]
pub struct GatewayError {
    pub key: CacheKey,
    pub kind: GatewayErrorKind,
}

impl GatewayError {
    pub fn is_cache_miss(&self) -> bool {
        matches!(self.kind, GatewayErrorKind::CacheMiss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
        }
    }

    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry)
    }
}

pub const DEFAULT_CONCURRENCY: usize = 4;

/// One executed chain step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub step_index: usize,
    /// Full history sent for this step (ends with the step's user message).
    pub request: Vec<Message>,
    pub response: ModelResponse,
}

#[derive(Debug, Error)]
#[error("chain step {step_index} failed: {source}")]
pub struct ChainError {
    pub step_index: usize,
    /// Steps that completed before the failure.
    pub completed: Vec<Exchange>,
    #[source]
    pub source: GatewayError,
}

pub struct Gateway {
    mode: GatewayMode,
    backend: Option<Arc<dyn Backend>>,
    cassette: Option<CassetteStore>,
    limiter: InflightLimiter,
    retry: RetryPolicy,
    calls: AtomicUsize,
    backend_calls: AtomicUsize,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("mode", &self.mode)
            .field("has_backend", &self.backend.is_some())
            .field("cassette", &self.cassette)
            .field("concurrency", &self.limiter.limit())
            .finish()
    }
}

impl Gateway {
    fn build(mode: GatewayMode, backend: Option<Arc<dyn Backend>>, cassette: Option<CassetteStore>) -> Self {
        Gateway {
            mode,
            backend,
            cassette,
            limiter: InflightLimiter::new(DEFAULT_CONCURRENCY),
            retry: RetryPolicy::default(),
            calls: AtomicUsize::new(0),
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn live(backend: Arc<dyn Backend>) -> Self {
        Self::build(GatewayMode::Live, Some(backend), None)
    }

    pub fn mock(backend: Arc<dyn Backend>) -> Self {
        Self::build(GatewayMode::Mock, Some(backend), None)
    }

    pub fn record(backend: Arc<dyn Backend>, cassette: CassetteStore) -> Self {
        Self::build(GatewayMode::Record, Some(backend), Some(cassette))
    }

    /// Replay never holds a backend, so it cannot reach the network.
    pub fn replay(cassette: CassetteStore) -> Self {
        Self::build(GatewayMode::Replay, None, Some(cassette))
    }

    pub fn with_concurrency(mut self, k: usize) -> Self {
        self.limiter = InflightLimiter::new(k);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn concurrency(&self) -> usize {
        self.limiter.limit()
    }

    /// Number of `complete` invocations, cache hits included.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Number of backend attempts, retries included.
    pub fn backend_call_count(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneous backend calls observed.
    pub fn peak_inflight(&self) -> usize {
        self.limiter.peak()
    }

    pub fn complete(&self, history: &[Message], params: &ModelParams) -> Result<ModelResponse, GatewayError> {
        let key = CacheKey::compute(params, history);
        self.calls.fetch_add(1, Ordering::SeqCst);
        let err = |kind| GatewayError { key: key.clone(), kind };

        match history.last() {
            Some(m) if m.author == Author::User && !m.text.is_empty() => {}
            _ => return Err(err(GatewayErrorKind::InvalidHistory)),
        }

        if let Some(cassette) = &self.cassette {
            let hit = cassette
                .get(&key)
                .map_err(|e| err(GatewayErrorKind::Cassette(e.to_string())))?;
            if let Some(entry) = hit {
                return Ok(ModelResponse {
                    text: entry.response_text,
                    finish_reason: entry.finish_reason,
                    latency_ms: 0,
                    from_cache: true,
                    digest: key,
                });
            }
            if self.mode == GatewayMode::Replay {
                return Err(err(GatewayErrorKind::CacheMiss));
            }
        }

        let backend = self
            .backend
            .as_ref()
            .ok_or_else(|| err(GatewayErrorKind::NoBackend(self.mode)))?;
        let started = Instant::now();
        let reply = self.send_with_retries(backend.as_ref(), history, params).map_err(err)?;
        let latency_ms = started.elapsed().as_millis() as u64;

        if let Some(cassette) = &self.cassette {
            let entry = CassetteEntry {
                digest: key.clone(),
                model_name: params.model_name.clone(),
                params: params.clone(),
                messages: history.to_vec(),
                response_text: reply.text.clone(),
                finish_reason: reply.finish_reason,
            };
            cassette
                .put(&entry)
                .map_err(|e| err(GatewayErrorKind::Cassette(e.to_string())))?;
        }

        Ok(ModelResponse {
            text: reply.text,
            finish_reason: reply.finish_reason,
            latency_ms,
            from_cache: false,
            digest: key,
        })
    }

    fn send_with_retries(
        &self,
        backend: &dyn Backend,
        history: &[Message],
        params: &ModelParams,
    ) -> Result<BackendReply, GatewayErrorKind> {
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                self.backend_calls.fetch_add(1, Ordering::SeqCst);
                backend.send(history, params)
            };
            match result {
                Ok(reply) => return Ok(reply),
                Err(BackendError::Transient(msg)) => {
                    if attempt >= self.retry.max_retries {
                        return Err(GatewayErrorKind::Exhausted {
                            attempts: attempt + 1,
                            last: msg,
                        });
                    }
                    std::thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
                Err(BackendError::Auth(msg)) => return Err(GatewayErrorKind::Auth(msg)),
                Err(BackendError::Rejected(msg)) => return Err(GatewayErrorKind::Backend(msg)),
            }
        }
    }

    /// Executes the chain's steps in order as one growing conversation.
    pub fn run_chain(&self, chain: &PromptChain, params: &ModelParams) -> Result<Vec<Exchange>, ChainError> {
        self.run_chain_after(&[], chain, params)
    }

    /// Like [`Gateway::run_chain`] but continues an existing conversation.
    pub fn run_chain_after(
        &self,
        prefix: &[Message],
        chain: &PromptChain,
        params: &ModelParams,
    ) -> Result<Vec<Exchange>, ChainError> {
        let mut history = prefix.to_vec();
        let mut done: Vec<Exchange> = Vec::with_capacity(chain.steps.len());
        for step in &chain.steps {
            history.push(Message::user(step.rendered_text.clone()));
            match self.complete(&history, params) {
                Ok(response) => {
                    let request = history.clone();
                    history.push(Message::assistant(response.text.clone()));
                    done.push(Exchange {
                        step_index: step.step_index,
                        request,
                        response,
                    });
                }
                Err(source) => {
                    return Err(ChainError {
                        step_index: step.step_index,
                        completed: done,
                        source,
                    })
                }
            }
        }
        Ok(done)
    }
}
