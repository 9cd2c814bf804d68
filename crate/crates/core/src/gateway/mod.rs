//! Provider-agnostic access to chat-completion and text-embedding endpoints.
//!
//! Chat and embedding providers are separate traits: generation and semantic
//! similarity are served by different models. Both traits require `Send +
//! Sync` so a single handle can serve concurrent callers.

mod http;
mod mock;
mod ratelimit;
mod retry;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{
    Credential, HttpChatProvider, HttpConfig, HttpEmbeddingProvider, HttpReply, Transport,
    TransportError, UreqTransport, CHAT_KEY_ENV, EMBED_KEY_ENV,
};
pub use mock::{fnv1a64, tokenize, Fixture, Matcher, MockChatProvider, MockEmbeddingProvider};
pub use ratelimit::TokenBucket;
pub use retry::{with_retry, RecordingSleeper, RetryPolicy, Sleeper, ThreadSleeper};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication failed (HTTP {status}); check the API key")]
    Auth { status: u16 },
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider failed after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("provider rejected the request (HTTP {status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("no fixture matches prompt starting {0:?}")]
    NoFixture(String),
    #[error("embedding dimension mismatch: expected {expected}, got {found} at position {position}")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        position: usize,
    },
    #[error("text at position {0} is empty")]
    EmptyText(usize),
    #[error("text at position {0} has no embeddable tokens")]
    NoTokens(usize),
    #[error("provider configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transient(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Provenance tag, e.g. `<run_id>/coding/<transcript_id>`. Never sent.
    pub seed_tag: String,
}

impl ChatRequest {
    pub fn new(
        model: impl Into<String>,
        prompt: impl Into<String>,
        temperature: f64,
        max_output_tokens: u32,
        seed_tag: impl Into<String>,
    ) -> Result<Self, GatewayError> {
        let request = ChatRequest {
            model: model.into(),
            prompt: prompt.into(),
            temperature,
            max_output_tokens,
            seed_tag: seed_tag.into(),
        };
        request.validate()?;
        Ok(request)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.input += rhs.input;
        self.output += rhs.output;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub model: String,
    pub token_usage: TokenUsage,
    pub latency_ms: u64,
    /// The provider stopped because it hit the output-token limit.
    pub truncated: bool,
    /// Retries spent before this response succeeded.
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        EmbeddingVector { values, norm }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

pub trait ChatProvider: Send + Sync {
    /// Stable identifier recorded in manifests, e.g. `mock` or `http:<endpoint>`.
    fn id(&self) -> String;
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> String;
    /// One vector per text, in input order, all of one dimension.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError>;
}

/// Shared precondition for every `embed` implementation.
pub fn check_embed_input(texts: &[String]) -> Result<(), GatewayError> {
    if texts.is_empty() {
        return Err(GatewayError::InvalidRequest("no texts to embed".into()));
    }
    if let Some(pos) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(GatewayError::EmptyText(pos));
    }
    Ok(())
}

/// Fails loudly when a provider hands back vectors of differing dimension.
pub fn check_dimensions(vectors: &[EmbeddingVector]) -> Result<(), GatewayError> {
    let Some(first) = vectors.first() else {
        return Ok(());
    };
    let expected = first.dimension();
    for (position, v) in vectors.iter().enumerate() {
        if v.dimension() != expected {
            return Err(GatewayError::DimensionMismatch {
                expected,
                found: v.dimension(),
                position,
            });
        }
    }
    Ok(())
}

/// Applies `f` to every item with at most `parallelism` calls in flight.
/// Results come back in input order regardless of completion order.
pub fn map_bounded<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = parallelism.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}
