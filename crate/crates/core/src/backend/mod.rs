//! Text generation and similarity scoring backends.
//!
//! Generation and scoring are separate traits so a run can pair any
//! generator with any scorer (chat model + embedding model, or a script
//! with plain Jaccard). [`ModelClient`] bundles the two with the call log
//! every agent goes through.

mod remote;
mod scripted;

use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use remote::{
    RemoteChat, RemoteConfig, RemoteEmbedding, RetryPolicy, API_KEY_VAR, BASE_URL_VAR, DEFAULT_BASE_URL,
    DEFAULT_CHAT_MODEL, DEFAULT_EMBEDDING_MODEL,
};
pub use scripted::{ScriptEntry, ScriptedBackend, SIMILARITY_TAG};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited by remote endpoint")]
    RateLimited,
    #[error("remote endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("script has no response left for tag `{0}`")]
    ScriptExhausted(String),
    #[error("backend returned an empty completion for `{0}`")]
    EmptyCompletion(String),
    #[error("embedding dimensions differ: {0} vs {1}")]
    EmbeddingDimensionMismatch(usize, usize),
    #[error("script line {line}: {message}")]
    ScriptParse { line: usize, message: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::RateLimited)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteChat,
    RemoteEmbedding,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Template that produced the prompt, optionally `/`-qualified
    /// (`reflect/belief`). Scripts route on it.
    pub tag: String,
}

impl GenerationRequest {
    pub fn new(tag: impl Into<String>, prompt: impl Into<String>, temperature: f64) -> Self {
        Self { prompt: prompt.into(), temperature, max_tokens: 512, tag: tag.into() }
    }
}

/// Which comparison a similarity call belongs to; scripts may pin its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Prediction vs. real utterance (`S`).
    #[serde(alias = "s")]
    Foresight,
    /// Counterfactual virtual response vs. real utterance (`S_v`).
    #[serde(alias = "s_v")]
    Virtual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SimilarityProbe {
    pub round: usize,
    pub kind: ScoreKind,
}

pub trait TextGenerator: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError>;
}

pub trait SimilarityScorer: Send + Sync {
    fn kind(&self) -> BackendKind;
    /// Symmetric score in [0, 1]. `probe` identifies foresight comparisons.
    fn score(&self, a: &str, b: &str, probe: Option<SimilarityProbe>) -> Result<f64, BackendError>;
}

/// Token-set Jaccard over lowercase whitespace-separated tokens.
pub fn jaccard(a: &str, b: &str) -> f64 {
    use std::collections::HashSet;
    let a: HashSet<String> = a.split_whitespace().map(str::to_lowercase).collect();
    let b: HashSet<String> = b.split_whitespace().map(str::to_lowercase).collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Cosine similarity, clamped into [0, 1].
pub fn clamped_cosine(a: &[f64], b: &[f64]) -> Result<f64, BackendError> {
    if a.len() != b.len() {
        return Err(BackendError::EmbeddingDimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct JaccardScorer;

impl SimilarityScorer for JaccardScorer {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn score(&self, a: &str, b: &str, _probe: Option<SimilarityProbe>) -> Result<f64, BackendError> {
        Ok(jaccard(a, b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub seq: usize,
    pub tag: String,
    pub prompt: String,
    pub temperature: f64,
    pub response: String,
}

/// Append-only log of successful generation calls, shareable across threads.
#[derive(Debug, Clone, Default)]
pub struct CallLog(Arc<Mutex<Vec<CallRecord>>>);

impl CallLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, request: &GenerationRequest, response: &str) {
        let mut calls = self.0.lock().unwrap_or_else(|e| e.into_inner());
        let seq = calls.len();
        calls.push(CallRecord {
            seq,
            tag: request.tag.clone(),
            prompt: request.prompt.clone(),
            temperature: request.temperature,
            response: response.to_string(),
        });
    }

    pub fn snapshot(&self) -> Vec<CallRecord> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generator + scorer + call log. Cheap to clone.
#[derive(Clone)]
pub struct ModelClient {
    generator: Arc<dyn TextGenerator>,
    scorer: Arc<dyn SimilarityScorer>,
    log: CallLog,
}

impl fmt::Debug for ModelClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelClient")
            .field("generator", &self.generator.kind())
            .field("scorer", &self.scorer.kind())
            .field("calls", &self.log.len())
            .finish()
    }
}

impl ModelClient {
    pub fn new(generator: Arc<dyn TextGenerator>, scorer: Arc<dyn SimilarityScorer>) -> Self {
        Self { generator, scorer, log: CallLog::new() }
    }

    /// Scripted generation and scoring from one script instance.
    pub fn scripted(backend: ScriptedBackend) -> Self {
        let backend = Arc::new(backend);
        Self::new(backend.clone(), backend)
    }

    pub fn log(&self) -> &CallLog {
        &self.log
    }

    pub fn generator_kind(&self) -> BackendKind {
        self.generator.kind()
    }

    pub fn scorer_kind(&self) -> BackendKind {
        self.scorer.kind()
    }

    pub fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        if request.prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        let text = self.generator.generate(request)?;
        let text = text.trim();
        if text.is_empty() {
            return Err(BackendError::EmptyCompletion(request.tag.clone()));
        }
        self.log.push(request, text);
        Ok(text.to_string())
    }

    pub fn score(&self, a: &str, b: &str, probe: Option<SimilarityProbe>) -> Result<f64, BackendError> {
        if a.trim().is_empty() || b.trim().is_empty() {
            return Err(BackendError::InvalidRequest("similarity of empty text".into()));
        }
        let s = self.scorer.score(a, b, probe)?;
        if !s.is_finite() {
            return Err(BackendError::MalformedResponse(format!("similarity {s}")));
        }
        Ok(s.clamp(0.0, 1.0))
    }
}
