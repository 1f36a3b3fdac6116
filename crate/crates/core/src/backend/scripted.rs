use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;

use super::{
    jaccard, BackendError, BackendKind, GenerationRequest, ScoreKind, SimilarityProbe, SimilarityScorer, TextGenerator,
};

/// Reserved tag for similarity overrides in script files.
pub const SIMILARITY_TAG: &str = "__similarity__";

/// One line of a script file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ScriptEntry {
    Similarity {
        tag: String,
        round: usize,
        value: f64,
        #[serde(default = "default_kind")]
        kind: ScoreKind,
    },
    Response {
        tag: String,
        response: String,
    },
}

fn default_kind() -> ScoreKind {
    ScoreKind::Foresight
}

/// Canned responses in per-tag FIFO queues, plus optional pinned similarity
/// values keyed by (round, kind). Unpinned similarities fall back to Jaccard.
///
/// A request tagged `reflect/belief` is served from the `reflect/belief`
/// queue when that queue exists, otherwise from `reflect`.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queues: Mutex<HashMap<String, VecDeque<String>>>,
    overrides: HashMap<(usize, ScoreKind), f64>,
}

impl Clone for ScriptedBackend {
    fn clone(&self) -> Self {
        Self {
            queues: Mutex::new(self.queues.lock().unwrap_or_else(|e| e.into_inner()).clone()),
            overrides: self.overrides.clone(),
        }
    }
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries<T: Into<String>, R: Into<String>>(entries: impl IntoIterator<Item = (T, R)>) -> Self {
        let mut backend = Self::new();
        for (tag, response) in entries {
            backend.push(tag, response);
        }
        backend
    }

    pub fn push(&mut self, tag: impl Into<String>, response: impl Into<String>) {
        self.queues
            .get_mut()
            .unwrap_or_else(|e| e.into_inner())
            .entry(tag.into())
            .or_default()
            .push_back(response.into());
    }

    pub fn pin_similarity(&mut self, round: usize, kind: ScoreKind, value: f64) {
        self.overrides.insert((round, kind), value);
    }

    pub fn load_script(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse_script(&text)
    }

    /// JSON Lines, one entry per non-blank line.
    pub fn parse_script(text: &str) -> Result<Self, BackendError> {
        let mut backend = Self::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(line)
                .map_err(|e| BackendError::ScriptParse { line: line_no, message: e.to_string() })?;
            match entry {
                ScriptEntry::Similarity { tag, round, value, kind } => {
                    if tag != SIMILARITY_TAG {
                        return Err(BackendError::ScriptParse {
                            line: line_no,
                            message: format!("similarity override must use tag {SIMILARITY_TAG}, got `{tag}`"),
                        });
                    }
                    if !(0.0..=1.0).contains(&value) {
                        return Err(BackendError::ScriptParse {
                            line: line_no,
                            message: format!("similarity {value} outside [0, 1]"),
                        });
                    }
                    backend.pin_similarity(round, kind, value);
                }
                ScriptEntry::Response { tag, response } => {
                    if tag == SIMILARITY_TAG {
                        return Err(BackendError::ScriptParse {
                            line: line_no,
                            message: "similarity override needs `round` and `value`".into(),
                        });
                    }
                    backend.push(tag, response);
                }
            }
        }
        Ok(backend)
    }

    /// Responses still queued under `tag`.
    pub fn remaining(&self, tag: &str) -> usize {
        self.queues.lock().unwrap_or_else(|e| e.into_inner()).get(tag).map_or(0, VecDeque::len)
    }

    pub fn tags(&self) -> Vec<String> {
        let mut tags: Vec<_> = self.queues.lock().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect();
        tags.sort();
        tags
    }
}

impl TextGenerator for ScriptedBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let mut queues = self.queues.lock().unwrap_or_else(|e| e.into_inner());
        let base = request.tag.split('/').next().unwrap_or_default();
        for key in [request.tag.as_str(), base] {
            if let Some(queue) = queues.get_mut(key) {
                if let Some(response) = queue.pop_front() {
                    return Ok(response);
                }
            }
        }
        Err(BackendError::ScriptExhausted(request.tag.clone()))
    }
}

impl SimilarityScorer for ScriptedBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn score(&self, a: &str, b: &str, probe: Option<SimilarityProbe>) -> Result<f64, BackendError> {
        if let Some(p) = probe {
            if let Some(v) = self.overrides.get(&(p.round, p.kind)) {
                return Ok(*v);
            }
        }
        Ok(jaccard(a, b))
    }
}
