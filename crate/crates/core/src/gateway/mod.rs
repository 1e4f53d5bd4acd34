//! Cached, rate-limited client for chat-completion endpoints.
//!
//! Every request is content-addressed by [`ChatRequest::hash`]. A warm cache
//! answers without touching the transport, which is what makes recorded runs
//! replayable against closed APIs that offer no sampling seed.

mod cache;
mod http;
pub mod wire;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::ResponseCache;
pub use http::HttpTransport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    /// Draw index for deliberate resampling of an otherwise identical request.
    /// Part of the cache key, never sent over the wire.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub sample: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            model: model.into(),
            messages,
            temperature: 0.0,
            max_tokens: None,
            sample: 0,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = Some(n);
        self
    }

    pub fn with_sample(mut self, sample: u32) -> Self {
        self.sample = sample;
        self
    }

    /// Hex SHA-256 over the JSON serialization of every field.
    pub fn hash(&self) -> String {
        let body = serde_json::to_vec(self).expect("ChatRequest serializes");
        let mut h = Sha256::new();
        h.update(b"dprecon/chat/v1\0");
        h.update(&body);
        hex::encode(h.finalize())
    }

    pub fn last_user(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.messages.iter().any(|m| m.content.contains(needle))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub total_tokens: u64,
}

/// What a transport hands back for one successful call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl Completion {
    pub fn text(content: impl Into<String>) -> Self {
        Completion {
            content: content.into(),
            finish_reason: Some("stop".into()),
            usage: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Network,
    Cache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: Option<String>,
    pub usage: Option<Usage>,
    pub latency_ms: u64,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("authentication rejected (status {status}): {detail}")]
    Auth { status: u16, detail: String },
    #[error("request timed out")]
    Timeout,
    #[error("network error: {0}")]
    Network(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl TransportError {
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Timeout | TransportError::Network(_) => true,
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            TransportError::Auth { .. } | TransportError::Malformed(_) => false,
        }
    }
}

/// One chat-completion backend: a remote API, a local server, or a mock.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<Completion, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn send(&self, request: &ChatRequest) -> Result<Completion, TransportError> {
        (**self).send(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("no endpoint configured for model {0:?}")]
    UnknownModel(String),
    #[error("authentication failed for {model}: {detail}")]
    Auth { model: String, detail: String },
    #[error("{model}: gave up after {attempts} attempt(s): {last}")]
    Exhausted {
        model: String,
        attempts: u32,
        last: String,
    },
    #[error("{model}: request rejected: {detail}")]
    Rejected { model: String, detail: String },
    #[error("cache: {0}")]
    Cache(String),
}

impl GatewayError {
    /// Transient failures a caller may retry later.
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Exhausted { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// total attempts including the first
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Pause after the `failures`-th consecutive failure (1-based).
    pub fn delay(&self, failures: u32) -> Duration {
        let exp = self.multiplier.powi(failures.saturating_sub(1) as i32);
        let ms = (self.base_delay_ms as f64 * exp).min(self.max_delay_ms as f64);
        Duration::from_millis(ms as u64)
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Fake clock: records requested pauses instead of sleeping.
#[derive(Default)]
pub struct RecordingSleeper {
    pauses: Mutex<Vec<Duration>>,
}

impl RecordingSleeper {
    pub fn pauses(&self) -> Vec<Duration> {
        self.pauses.lock().unwrap().clone()
    }
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, d: Duration) {
        self.pauses.lock().unwrap().push(d);
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

type Outcome = Result<ChatResponse, GatewayError>;

#[derive(Default)]
struct Pending {
    slot: Mutex<Option<Outcome>>,
    cv: Condvar,
}

impl Pending {
    fn wait(&self) -> Outcome {
        let mut slot = self.slot.lock().unwrap();
        while slot.is_none() {
            slot = self.cv.wait(slot).unwrap();
        }
        slot.clone().unwrap()
    }

    fn publish(&self, outcome: Outcome) {
        *self.slot.lock().unwrap() = Some(outcome);
        self.cv.notify_all();
    }
}

pub struct Gateway {
    routes: HashMap<String, Arc<dyn Transport>>,
    cache: Option<ResponseCache>,
    policy: RetryPolicy,
    limiter: Semaphore,
    in_flight: Mutex<HashMap<String, Arc<Pending>>>,
    sleeper: Arc<dyn Sleeper>,
    secrets: Vec<String>,
    network_calls: AtomicUsize,
}

pub struct GatewayBuilder {
    routes: HashMap<String, Arc<dyn Transport>>,
    cache: Option<ResponseCache>,
    policy: RetryPolicy,
    max_in_flight: usize,
    sleeper: Arc<dyn Sleeper>,
    secrets: Vec<String>,
}

impl GatewayBuilder {
    pub fn route(mut self, model: impl Into<String>, transport: Arc<dyn Transport>) -> Self {
        self.routes.insert(model.into(), transport);
        self
    }

    pub fn cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn retry(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n;
        self
    }

    pub fn sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    /// Strings scrubbed from every error detail the gateway surfaces.
    pub fn secret(mut self, secret: impl Into<String>) -> Self {
        let s = secret.into();
        if !s.is_empty() {
            self.secrets.push(s);
        }
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            routes: self.routes,
            cache: self.cache,
            policy: self.policy,
            limiter: Semaphore::new(self.max_in_flight),
            in_flight: Mutex::new(HashMap::new()),
            sleeper: self.sleeper,
            secrets: self.secrets,
            network_calls: AtomicUsize::new(0),
        }
    }
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder {
            routes: HashMap::new(),
            cache: None,
            policy: RetryPolicy::default(),
            max_in_flight: 8,
            sleeper: Arc::new(ThreadSleeper),
            secrets: Vec::new(),
        }
    }

    pub fn has_model(&self, model: &str) -> bool {
        self.routes.contains_key(model)
    }

    /// Transport calls made so far (cache hits and coalesced waiters excluded).
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn complete_chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let transport = self
            .routes
            .get(&request.model)
            .ok_or_else(|| GatewayError::UnknownModel(request.model.clone()))?;
        let key = request.hash();
        if let Some(hit) = self.cached(&key)? {
            return Ok(hit);
        }

        let (pending, leader) = {
            let mut map = self.in_flight.lock().unwrap();
            match map.get(&key) {
                Some(p) => (p.clone(), false),
                None => {
                    let p = Arc::new(Pending::default());
                    map.insert(key.clone(), p.clone());
                    (p, true)
                }
            }
        };
        if !leader {
            return pending.wait();
        }

        let outcome = match self.cached(&key) {
            Ok(Some(hit)) => Ok(hit),
            Ok(None) => self.fetch(transport.as_ref(), request, &key),
            Err(e) => Err(e),
        };
        pending.publish(outcome.clone());
        self.in_flight.lock().unwrap().remove(&key);
        outcome
    }

    fn cached(&self, key: &str) -> Result<Option<ChatResponse>, GatewayError> {
        let Some(cache) = &self.cache else {
            return Ok(None);
        };
        Ok(cache.get(key)?.map(|entry| ChatResponse {
            content: entry.completion.content,
            finish_reason: entry.completion.finish_reason,
            usage: entry.completion.usage,
            latency_ms: entry.latency_ms,
            source: Source::Cache,
        }))
    }

    fn fetch(&self, transport: &dyn Transport, request: &ChatRequest, key: &str) -> Outcome {
        let model = request.model.clone();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            let result = {
                let _permit = self.limiter.acquire();
                self.network_calls.fetch_add(1, Ordering::SeqCst);
                transport.send(request)
            };
            match result {
                Ok(completion) => {
                    let latency_ms = started.elapsed().as_millis() as u64;
                    if let Some(cache) = &self.cache {
                        cache.put(key, request, &completion, latency_ms)?;
                    }
                    return Ok(ChatResponse {
                        content: completion.content,
                        finish_reason: completion.finish_reason,
                        usage: completion.usage,
                        latency_ms,
                        source: Source::Network,
                    });
                }
                Err(TransportError::Auth { status, detail }) => {
                    return Err(GatewayError::Auth {
                        model,
                        detail: format!("status {status}: {}", self.redact(&detail)),
                    });
                }
                Err(e) if e.is_transient() && attempt < self.policy.max_attempts => {
                    let pause = self.policy.delay(attempt);
                    tracing::warn!(
                        model = %model,
                        attempt,
                        delay_ms = pause.as_millis() as u64,
                        error = %self.redact(&e.to_string()),
                        "transient failure, backing off"
                    );
                    self.sleeper.sleep(pause);
                }
                Err(e) if e.is_transient() => {
                    return Err(GatewayError::Exhausted {
                        model,
                        attempts: attempt,
                        last: self.redact(&e.to_string()),
                    });
                }
                Err(e) => {
                    return Err(GatewayError::Rejected {
                        model,
                        detail: self.redact(&e.to_string()),
                    });
                }
            }
        }
    }

    fn redact(&self, text: &str) -> String {
        self.secrets
            .iter()
            .fold(text.to_string(), |acc, s| acc.replace(s.as_str(), "[REDACTED]"))
    }
}
