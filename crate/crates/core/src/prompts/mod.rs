//! Prompt templates, placeholder rendering and parsers for the structured
//! replies the templates ask for.
//!
//! Template texts live in `templates/<id>.txt` and are embedded at compile
//! time. [`TemplateRegistry::from_dir`] loads an edited copy instead.

mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use parse::{judgment_or_say, parse_bdi_sets, parse_judgment, parse_reflection, ReflectionOutput, DEFAULT_SHIFT};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("missing binding for placeholder `{0}`")]
    MissingPlaceholder(String),
    #[error("unknown template id `{0}`")]
    UnknownTemplate(String),
    #[error("reply contains neither SAY nor GOODBYE")]
    UnparseableJudgment,
    #[error("no belief/desire/intention sets found in reply")]
    NoTriplesFound,
    #[error("no Reflection/Plan/Updated sections found in reply")]
    NoSectionsFound,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    BdiInit,
    SelfUtterance,
    SecondOrderJudgment,
    InferTopK,
    PredictResponse,
    Reflect,
    CounterfactualReflect,
    UtterFromInferred,
    BaselineEmpathetic,
    BaselinePersuasive,
    ReverseBdi,
}

impl TemplateId {
    pub const ALL: [TemplateId; 11] = [
        TemplateId::BdiInit,
        TemplateId::SelfUtterance,
        TemplateId::SecondOrderJudgment,
        TemplateId::InferTopK,
        TemplateId::PredictResponse,
        TemplateId::Reflect,
        TemplateId::CounterfactualReflect,
        TemplateId::UtterFromInferred,
        TemplateId::BaselineEmpathetic,
        TemplateId::BaselinePersuasive,
        TemplateId::ReverseBdi,
    ];

    /// Asset file stem, also used as the backend request tag.
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::BdiInit => "bdi_init",
            TemplateId::SelfUtterance => "self_utterance",
            TemplateId::SecondOrderJudgment => "second_order_judgment",
            TemplateId::InferTopK => "infer_top_k",
            TemplateId::PredictResponse => "predict_response",
            TemplateId::Reflect => "reflect",
            TemplateId::CounterfactualReflect => "counterfactual_reflect",
            TemplateId::UtterFromInferred => "utter_from_inferred",
            TemplateId::BaselineEmpathetic => "baseline_empathetic",
            TemplateId::BaselinePersuasive => "baseline_persuasive",
            TemplateId::ReverseBdi => "reverse_bdi",
        }
    }

    /// The binding set each template expects.
    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateId::BdiInit => &["agent_name", "recipient_name", "corpus_dialogue_episode", "definition", "top_k"],
            TemplateId::SelfUtterance => &[
                "agent_name",
                "recipient_name",
                "conversation_history",
                "self_belief",
                "self_desire",
                "self_intention",
                "judgment",
                "judgement_reason",
                "seek_goal",
            ],
            TemplateId::SecondOrderJudgment => {
                &["agent_name", "recipient_name", "conversation_history", "belief", "desire", "intention"]
            }
            TemplateId::InferTopK => &[
                "agent_name",
                "recipient_name",
                "conversation_history",
                "self_belief",
                "self_desire",
                "self_intention",
                "top_k",
                "picked_type",
            ],
            TemplateId::PredictResponse => {
                &["agent_name", "recipient_name", "conversation_history", "picked_type", "inferred_bid"]
            }
            TemplateId::Reflect => &[
                "agent_name",
                "recipient_name",
                "conversation_history",
                "reflection_history",
                "picked_type",
                "inferred_bdi",
                "top_k",
            ],
            TemplateId::CounterfactualReflect => &[
                "agent_name",
                "recipient_name",
                "conversation_history",
                "reflection_history",
                "picked_type",
                "inferred_bdi",
                "inferred_top_bdi",
                "predicted_response",
                "real_response",
                "top_k",
            ],
            TemplateId::UtterFromInferred => &[
                "agent_name",
                "recipient_name",
                "conversation_history",
                "inferred_belief",
                "inferred_desire",
                "inferred_intention",
                "response_goal",
            ],
            TemplateId::BaselineEmpathetic | TemplateId::BaselinePersuasive => {
                &["agent_name", "recipient_name", "corpus_dialogue_episode"]
            }
            TemplateId::ReverseBdi => &["agent_name", "recipient_name", "self_belief", "self_desire", "self_intention"],
        }
    }

    /// Whether the BDI definition block is prepended when rendering.
    pub fn includes_definition(self) -> bool {
        matches!(self, TemplateId::BdiInit | TemplateId::InferTopK)
    }

    fn embedded_text(self) -> &'static str {
        match self {
            TemplateId::BdiInit => include_str!("../../templates/bdi_init.txt"),
            TemplateId::SelfUtterance => include_str!("../../templates/self_utterance.txt"),
            TemplateId::SecondOrderJudgment => include_str!("../../templates/second_order_judgment.txt"),
            TemplateId::InferTopK => include_str!("../../templates/infer_top_k.txt"),
            TemplateId::PredictResponse => include_str!("../../templates/predict_response.txt"),
            TemplateId::Reflect => include_str!("../../templates/reflect.txt"),
            TemplateId::CounterfactualReflect => include_str!("../../templates/counterfactual_reflect.txt"),
            TemplateId::UtterFromInferred => include_str!("../../templates/utter_from_inferred.txt"),
            TemplateId::BaselineEmpathetic => include_str!("../../templates/baseline_empathetic.txt"),
            TemplateId::BaselinePersuasive => include_str!("../../templates/baseline_persuasive.txt"),
            TemplateId::ReverseBdi => include_str!("../../templates/reverse_bdi.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| PromptError::UnknownTemplate(s.to_string()))
    }
}

const DEFINITION_FILE: &str = "definition";
const EMBEDDED_DEFINITION: &str = include_str!("../../templates/definition.txt");

/// Placeholder name → value.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bindings(BTreeMap<String, String>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, key: &str, value: impl Into<String>) -> Self {
        self.insert(key, value);
        self
    }

    pub fn insert(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }
}

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());

/// Placeholder names occurring in `text`, deduplicated.
pub fn placeholders_in(text: &str) -> BTreeSet<String> {
    PLACEHOLDER.captures_iter(text).map(|c| c[1].to_string()).collect()
}

/// Template texts keyed by id plus the BDI definition block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateRegistry {
    texts: BTreeMap<TemplateId, String>,
    definition: String,
}

static EMBEDDED: LazyLock<TemplateRegistry> = LazyLock::new(TemplateRegistry::build_embedded);

impl TemplateRegistry {
    pub fn embedded() -> &'static TemplateRegistry {
        &EMBEDDED
    }

    fn build_embedded() -> Self {
        let texts = TemplateId::ALL.into_iter().map(|id| (id, id.embedded_text().trim_end().to_string())).collect();
        Self { texts, definition: EMBEDDED_DEFINITION.trim_end().to_string() }
    }

    /// Loads `<dir>/<id>.txt` for every id and `<dir>/definition.txt`.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |stem: &str| {
            let path = dir.join(format!("{stem}.txt"));
            std::fs::read_to_string(&path)
                .map(|t| t.trim_end().to_string())
                .map_err(|e| PromptError::Io { path: path.display().to_string(), message: e.to_string() })
        };
        let mut texts = BTreeMap::new();
        for id in TemplateId::ALL {
            texts.insert(id, read(id.as_str())?);
        }
        Ok(Self { texts, definition: read(DEFINITION_FILE)? })
    }

    pub fn text(&self, id: TemplateId) -> &str {
        &self.texts[&id]
    }

    pub fn definition(&self) -> &str {
        &self.definition
    }

    /// Substitutes every `{placeholder}` in one pass; bound values are not
    /// rescanned, so braces inside them survive untouched.
    pub fn render(&self, id: TemplateId, bindings: &Bindings) -> Result<String, PromptError> {
        let template = self.text(id);
        let mut out = String::with_capacity(template.len() + 256);
        if id.includes_definition() {
            out.push_str("Definition:\n");
            out.push_str(&self.definition);
            out.push_str("\n\n");
        }
        let mut last = 0;
        for caps in PLACEHOLDER.captures_iter(template) {
            let whole = caps.get(0).unwrap();
            let name = &caps[1];
            let value = match bindings.get(name) {
                Some(v) => v,
                None if name == "definition" => self.definition.as_str(),
                None => return Err(PromptError::MissingPlaceholder(name.to_string())),
            };
            out.push_str(&template[last..whole.start()]);
            out.push_str(value);
            last = whole.end();
        }
        out.push_str(&template[last..]);
        Ok(out)
    }

    /// Hex SHA-256 of each template text and of the definition block.
    pub fn checksums(&self) -> BTreeMap<String, String> {
        let digest = |text: &str| hex::encode(Sha256::digest(text.as_bytes()));
        let mut sums: BTreeMap<String, String> =
            self.texts.iter().map(|(id, text)| (id.as_str().to_string(), digest(text))).collect();
        sums.insert(DEFINITION_FILE.to_string(), digest(&self.definition));
        sums
    }
}

/// Renders with the embedded registry.
pub fn render(id: TemplateId, bindings: &Bindings) -> Result<String, PromptError> {
    TemplateRegistry::embedded().render(id, bindings)
}
