//! JSON-over-HTTP adapters for OpenAI-style chat-completion and embedding
//! endpoints. The vendor wire shape is confined to this file.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{
    check_dimensions, check_embed_input, with_retry, ChatProvider, ChatRequest, ChatResponse,
    EmbeddingProvider, EmbeddingVector, GatewayError, RetryPolicy, Sleeper, ThreadSleeper,
    TokenBucket, TokenUsage,
};

pub const CHAT_KEY_ENV: &str = "THEMA_API_KEY";
pub const EMBED_KEY_ENV: &str = "THEMA_EMBED_API_KEY";

/// An API key. Never printed: `Debug` and `Display` are redacted.
#[derive(Clone)]
pub struct Credential(String);

impl Credential {
    pub fn new(secret: impl Into<String>) -> Self {
        Credential(secret.into())
    }

    /// Reads `var`, or `fallback` when `var` is unset or empty.
    pub fn from_env(var: &str, fallback: Option<&str>) -> Result<Self, GatewayError> {
        let read = |v: &str| std::env::var(v).ok().filter(|s| !s.trim().is_empty());
        read(var)
            .or_else(|| fallback.and_then(read))
            .map(Credential)
            .ok_or_else(|| GatewayError::Config(format!("environment variable {var} is not set")))
    }

    fn expose(&self) -> &str {
        &self.0
    }

    /// Replaces any occurrence of the secret in `text`.
    pub fn scrub(&self, text: &str) -> String {
        if self.0.is_empty() {
            text.to_string()
        } else {
            text.replace(&self.0, "***")
        }
    }
}

impl fmt::Debug for Credential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Credential(***)")
    }
}

impl fmt::Display for Credential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("***")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Connect(String),
}

/// Minimal POST-JSON transport so retries can be exercised against a
/// scripted stand-in.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: &str,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: &str,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut response = agent
            .post(url)
            .header("Authorization", &format!("Bearer {bearer}"))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => TransportError::Timeout,
                other => TransportError::Connect(other.to_string()),
            })?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

#[derive(Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    pub credential: Credential,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub requests_per_minute: Option<u32>,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, credential: Credential) -> Self {
        HttpConfig {
            endpoint: endpoint.into(),
            credential,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            requests_per_minute: Some(30),
        }
    }
}

/// Shared request machinery: rate limit, retry, status classification.
struct Client {
    config: HttpConfig,
    transport: Arc<dyn Transport>,
    sleeper: Arc<dyn Sleeper>,
    limiter: Option<TokenBucket>,
}

impl Client {
    fn new(config: HttpConfig, transport: Arc<dyn Transport>, sleeper: Arc<dyn Sleeper>) -> Self {
        let limiter = config.requests_per_minute.map(TokenBucket::per_minute);
        Client {
            config,
            transport,
            sleeper,
            limiter,
        }
    }

    fn post(&self, body: &Value) -> Result<(Value, u32), GatewayError> {
        let body = body.to_string();
        let credential = &self.config.credential;
        with_retry(&self.config.retry, self.sleeper.as_ref(), |_| {
            if let Some(limiter) = &self.limiter {
                limiter.acquire(self.sleeper.as_ref());
            }
            let reply = self
                .transport
                .post_json(&self.config.endpoint, credential.expose(), &body, self.config.timeout)
                .map_err(|e| match e {
                    TransportError::Timeout => GatewayError::Transient("request timed out".into()),
                    TransportError::Connect(m) => GatewayError::Transient(credential.scrub(&m)),
                })?;
            let message = || credential.scrub(&truncate(&reply.body, 300));
            match reply.status {
                200..=299 => serde_json::from_str::<Value>(&reply.body)
                    .map_err(|e| GatewayError::Malformed(format!("response is not JSON: {e}"))),
                401 | 403 => Err(GatewayError::Auth {
                    status: reply.status,
                }),
                429 | 500..=599 => Err(GatewayError::Transient(format!(
                    "HTTP {}: {}",
                    reply.status,
                    message()
                ))),
                status => Err(GatewayError::Rejected {
                    status,
                    message: message(),
                }),
            }
        })
    }
}

fn truncate(s: &str, max: usize) -> String {
    s.chars().take(max).collect()
}

pub struct HttpChatProvider {
    client: Client,
}

impl fmt::Debug for HttpChatProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpChatProvider")
            .field("endpoint", &self.client.config.endpoint)
            .field("credential", &self.client.config.credential)
            .finish()
    }
}

impl HttpChatProvider {
    pub fn new(config: HttpConfig) -> Self {
        Self::with_transport(config, Arc::new(UreqTransport), Arc::new(ThreadSleeper))
    }

    pub fn with_transport(
        config: HttpConfig,
        transport: Arc<dyn Transport>,
        sleeper: Arc<dyn Sleeper>,
    ) -> Self {
        HttpChatProvider {
            client: Client::new(config, transport, sleeper),
        }
    }
}

impl ChatProvider for HttpChatProvider {
    fn id(&self) -> String {
        format!("http:{}", self.client.config.endpoint)
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let body = json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let started = Instant::now();
        let (reply, retries) = self.client.post(&body)?;
        let latency_ms = started.elapsed().as_millis() as u64;
        if retries > 0 {
            log::info!("{}: succeeded after {retries} retries", request.seed_tag);
        }

        let choice = reply
            .pointer("/choices/0")
            .ok_or_else(|| GatewayError::Malformed("response has no choices".into()))?;
        let text = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::Malformed("choice has no message content".into()))?
            .to_string();
        let truncated = choice.get("finish_reason").and_then(Value::as_str) == Some("length");
        if truncated {
            log::warn!("{}: response truncated at the output-token limit", request.seed_tag);
        }
        let count = |p: &str| reply.pointer(p).and_then(Value::as_u64).unwrap_or(0);
        Ok(ChatResponse {
            text,
            model: reply
                .get("model")
                .and_then(Value::as_str)
                .unwrap_or(&request.model)
                .to_string(),
            token_usage: TokenUsage {
                input: count("/usage/prompt_tokens"),
                output: count("/usage/completion_tokens"),
            },
            latency_ms,
            truncated,
            retries,
        })
    }
}

pub struct HttpEmbeddingProvider {
    client: Client,
    model: String,
    batch_size: usize,
}

impl fmt::Debug for HttpEmbeddingProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpEmbeddingProvider")
            .field("endpoint", &self.client.config.endpoint)
            .field("model", &self.model)
            .field("credential", &self.client.config.credential)
            .finish()
    }
}

impl HttpEmbeddingProvider {
    pub fn new(config: HttpConfig, model: impl Into<String>, batch_size: usize) -> Self {
        Self::with_transport(
            config,
            model,
            batch_size,
            Arc::new(UreqTransport),
            Arc::new(ThreadSleeper),
        )
    }

    pub fn with_transport(
        config: HttpConfig,
        model: impl Into<String>,
        batch_size: usize,
        transport: Arc<dyn Transport>,
        sleeper: Arc<dyn Sleeper>,
    ) -> Self {
        HttpEmbeddingProvider {
            client: Client::new(config, transport, sleeper),
            model: model.into(),
            batch_size: batch_size.max(1),
        }
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let (reply, _) = self.client.post(&json!({"model": self.model, "input": texts}))?;
        let data = reply
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::Malformed("embedding response has no data array".into()))?;
        if data.len() != texts.len() {
            return Err(GatewayError::Malformed(format!(
                "asked for {} embeddings, received {}",
                texts.len(),
                data.len()
            )));
        }
        let mut indexed = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).unwrap_or(pos as u64) as usize;
            let values = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| GatewayError::Malformed("item has no embedding".into()))?
                .iter()
                .map(|v| {
                    v.as_f64()
                        .ok_or_else(|| GatewayError::Malformed("non-numeric embedding value".into()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            indexed.push((index, EmbeddingVector::new(values)));
        }
        indexed.sort_by_key(|(i, _)| *i);
        if indexed.iter().enumerate().any(|(pos, (i, _))| pos != *i) {
            return Err(GatewayError::Malformed("embedding indices are not 0..n".into()));
        }
        Ok(indexed.into_iter().map(|(_, v)| v).collect())
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn id(&self) -> String {
        format!("http:{}#{}", self.client.config.endpoint, self.model)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        check_embed_input(texts)?;
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            out.extend(self.embed_batch(batch)?);
        }
        check_dimensions(&out)?;
        Ok(out)
    }
}
