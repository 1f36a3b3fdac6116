use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use tracing::warn;

use super::{
    clamped_cosine, BackendError, BackendKind, GenerationRequest, SimilarityProbe, SimilarityScorer, TextGenerator,
};

pub const API_KEY_VAR: &str = "TOMSIM_API_KEY";
pub const BASE_URL_VAR: &str = "TOMSIM_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com";
pub const DEFAULT_CHAT_MODEL: &str = "gpt-4-0125-preview";
pub const DEFAULT_EMBEDDING_MODEL: &str = "text-embedding-3-large";

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        Self { max_attempts, base_delay: Duration::ZERO }
    }

    /// Runs `op` until it succeeds, fails permanently or attempts run out.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match op() {
                Err(e) if e.is_retryable() && attempt < attempts => {
                    let delay = self.base_delay * 2u32.pow(attempt - 1);
                    warn!(attempt, ?delay, error = %e, "retrying backend call");
                    thread::sleep(delay);
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            model: model.into(),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }

    /// Reads the key and optional base URL from the environment.
    pub fn from_env(model: impl Into<String>) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_VAR)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| BackendError::Config(format!("{API_KEY_VAR} is not set")))?;
        let base = std::env::var(BASE_URL_VAR).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        Ok(Self::new(base, key, model))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

fn http_client(config: &RemoteConfig) -> Result<reqwest::blocking::Client, BackendError> {
    reqwest::blocking::Client::builder()
        .timeout(config.timeout)
        .build()
        .map_err(|e| BackendError::Config(e.to_string()))
}

fn post_json(
    client: &reqwest::blocking::Client,
    config: &RemoteConfig,
    path: &str,
    body: &Value,
) -> Result<Value, BackendError> {
    let url = format!("{}{path}", config.base_url);
    let response = client
        .post(&url)
        .bearer_auth(&config.api_key)
        .json(body)
        .send()
        .map_err(|e| BackendError::Transport(e.to_string()))?;
    let status = response.status();
    let text = response.text().map_err(|e| BackendError::Transport(e.to_string()))?;
    if status.as_u16() == 429 {
        return Err(BackendError::RateLimited);
    }
    if status.is_server_error() {
        return Err(BackendError::Transport(format!("HTTP {}", status.as_u16())));
    }
    if !status.is_success() {
        return Err(BackendError::Http { status: status.as_u16(), body: text });
    }
    serde_json::from_str(&text).map_err(|e| BackendError::MalformedResponse(e.to_string()))
}

/// OpenAI-compatible chat completions endpoint.
#[derive(Debug)]
pub struct RemoteChat {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteChat {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = http_client(&config)?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }
}

impl TextGenerator for RemoteChat {
    fn kind(&self) -> BackendKind {
        BackendKind::RemoteChat
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let value = self.config.retry.run(|| post_json(&self.client, &self.config, "/v1/chat/completions", &body))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::MalformedResponse("missing choices[0].message.content".into()))
    }
}

/// Embedding endpoint; similarity is clamped cosine of the two vectors.
#[derive(Debug)]
pub struct RemoteEmbedding {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedding {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = http_client(&config)?;
        Ok(Self { config, client })
    }

    pub fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = json!({ "model": self.config.model, "input": texts });
        let value = self.config.retry.run(|| post_json(&self.client, &self.config, "/v1/embeddings", &body))?;
        let data = value
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::MalformedResponse("missing data".into()))?;
        if data.len() != texts.len() {
            return Err(BackendError::MalformedResponse(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        data.iter()
            .map(|item| {
                item.get("embedding")
                    .and_then(Value::as_array)
                    .and_then(|v| v.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
                    .ok_or_else(|| BackendError::MalformedResponse("bad embedding vector".into()))
            })
            .collect()
    }
}

impl SimilarityScorer for RemoteEmbedding {
    fn kind(&self) -> BackendKind {
        BackendKind::RemoteEmbedding
    }

    fn score(&self, a: &str, b: &str, _probe: Option<SimilarityProbe>) -> Result<f64, BackendError> {
        let vectors = self.embed(&[a, b])?;
        clamped_cosine(&vectors[0], &vectors[1])
    }
}
