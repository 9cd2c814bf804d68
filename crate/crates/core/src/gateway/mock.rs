//! Deterministic offline providers.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Deserialize;

use super::{
    check_embed_input, ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, EmbeddingVector,
    GatewayError, TokenUsage,
};

/// Selects a fixture: the prompt must contain `contains`, and when
/// `temperature` is set the request temperature must equal it.
#[derive(Debug, Clone, PartialEq)]
pub struct Matcher {
    pub contains: String,
    pub temperature: Option<f64>,
}

impl Matcher {
    pub fn contains(s: impl Into<String>) -> Self {
        Matcher {
            contains: s.into(),
            temperature: None,
        }
    }

    pub fn at_temperature(mut self, t: f64) -> Self {
        self.temperature = Some(t);
        self
    }

    fn matches(&self, request: &ChatRequest) -> bool {
        request.prompt.contains(&self.contains)
            && self
                .temperature
                .is_none_or(|t| (t - request.temperature).abs() < 1e-9)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub matcher: Matcher,
    pub response: String,
}

/// Answers each request with the first fixture (in list order) whose matcher
/// accepts it. Put more specific matchers first.
#[derive(Debug)]
pub struct MockChatProvider {
    fixtures: Vec<Fixture>,
    calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

#[derive(Deserialize)]
struct FixtureEntry {
    #[serde(rename = "match")]
    contains: String,
    #[serde(default)]
    temperature: Option<f64>,
    #[serde(default)]
    response: Option<String>,
    #[serde(default)]
    response_file: Option<String>,
}

impl MockChatProvider {
    pub fn new(fixtures: Vec<Fixture>) -> Result<Self, GatewayError> {
        if fixtures.is_empty() {
            return Err(GatewayError::Config("mock chat provider needs at least one fixture".into()));
        }
        Ok(MockChatProvider {
            fixtures,
            calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        })
    }

    /// Loads `fixtures.json` from `dir`: an ordered array of
    /// `{"match": "...", "temperature": 0.5?, "response": "..."}` objects, where
    /// `response_file` (relative to `dir`) may replace `response`.
    pub fn from_dir(dir: &Path) -> Result<Self, GatewayError> {
        let index = dir.join("fixtures.json");
        let read = |p: &Path| {
            std::fs::read_to_string(p)
                .map_err(|e| GatewayError::Config(format!("{}: {e}", p.display())))
        };
        let entries: Vec<FixtureEntry> = serde_json::from_str(&read(&index)?)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", index.display())))?;
        let mut fixtures = Vec::with_capacity(entries.len());
        for entry in entries {
            let response = match (entry.response, entry.response_file) {
                (Some(r), None) => r,
                (None, Some(file)) => read(&dir.join(file))?,
                _ => {
                    return Err(GatewayError::Config(format!(
                        "fixture {:?} needs exactly one of response / response_file",
                        entry.contains
                    )))
                }
            };
            fixtures.push(Fixture {
                matcher: Matcher {
                    contains: entry.contains,
                    temperature: entry.temperature,
                },
                response,
            });
        }
        MockChatProvider::new(fixtures)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Prompts received so far, in arrival order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompt log").clone()
    }
}

impl ChatProvider for MockChatProvider {
    fn id(&self) -> String {
        "mock".to_string()
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts.lock().expect("prompt log").push(request.prompt.clone());
        let fixture = self
            .fixtures
            .iter()
            .find(|f| f.matcher.matches(request))
            .ok_or_else(|| GatewayError::NoFixture(request.prompt.chars().take(60).collect()))?;
        Ok(ChatResponse {
            text: fixture.response.clone(),
            model: request.model.clone(),
            token_usage: TokenUsage {
                input: request.prompt.split_whitespace().count() as u64,
                output: fixture.response.split_whitespace().count() as u64,
            },
            latency_ms: 0,
            truncated: false,
            retries: 0,
        })
    }
}

/// 64-bit FNV-1a over the UTF-8 bytes of `s`.
pub fn fnv1a64(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Lowercases and splits on every character that is not alphabetic.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Bag-of-words hashing embedder.
///
/// For each text: [`tokenize`] it, add 1.0 to bucket `fnv1a64(token) %
/// dimension` for every token, then divide by the Euclidean norm. Texts that
/// produce no tokens are rejected.
#[derive(Debug, Clone)]
pub struct MockEmbeddingProvider {
    dimension: usize,
}

impl MockEmbeddingProvider {
    pub const MIN_DIMENSION: usize = 8;

    pub fn new(dimension: usize) -> Result<Self, GatewayError> {
        if dimension < Self::MIN_DIMENSION {
            return Err(GatewayError::Config(format!(
                "mock embedding dimension must be at least {}, got {dimension}",
                Self::MIN_DIMENSION
            )));
        }
        Ok(MockEmbeddingProvider { dimension })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_one(&self, position: usize, text: &str) -> Result<EmbeddingVector, GatewayError> {
        let mut values = vec![0.0; self.dimension];
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(GatewayError::NoTokens(position));
        }
        for token in &tokens {
            values[(fnv1a64(token) % self.dimension as u64) as usize] += 1.0;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(EmbeddingVector::new(values))
    }
}

impl EmbeddingProvider for MockEmbeddingProvider {
    fn id(&self) -> String {
        format!("mock-hash-{}", self.dimension)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        check_embed_input(texts)?;
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| self.embed_one(i, t))
            .collect()
    }
}
