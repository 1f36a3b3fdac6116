//! Agent A: speaks from its own BDI, initializes that BDI from a corpus
//! episode, optionally reverses it, and decides when it has been understood.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::backend::{BackendError, GenerationRequest, ModelClient};
use crate::dialogue::{AgentId, BdiTriple, DialogueError, DialogueHistory, Judgment, NameMap, Scenario};
use crate::prompts::{self, Bindings, PromptError, TemplateId};
use crate::rng::SeededRng;

/// Sampling temperature for utterances.
pub const UTTERANCE_TEMPERATURE: f64 = 0.7;
/// Sampling temperature for judgments, inference and plans.
pub const DETERMINISTIC_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Ledger(#[from] crate::ledger::LedgerError),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfAgentState {
    true_bdi: BdiTriple,
    pub scenario: Scenario,
    pub last_judgment: Option<Judgment>,
}

impl SelfAgentState {
    pub fn new(true_bdi: BdiTriple, scenario: Scenario) -> Self {
        Self { true_bdi, scenario, last_judgment: None }
    }

    pub fn true_bdi(&self) -> &BdiTriple {
        &self.true_bdi
    }

    pub fn display_name(&self) -> &'static str {
        self.scenario.display_name(AgentId::A)
    }

    pub fn recipient_name(&self) -> &'static str {
        self.scenario.display_name(AgentId::B)
    }

    fn names(&self) -> NameMap {
        self.scenario.names()
    }
}

/// Outcome of zero-shot initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitOutcome {
    pub bdi: BdiTriple,
    /// Position of `bdi` among the parsed candidates.
    pub index: usize,
    pub candidates: Vec<BdiTriple>,
}

/// Strips a leading `Name:` speaker prefix and wrapping quotes.
pub fn clean_utterance(raw: &str, names: &[&str]) -> String {
    let mut text = raw.trim();
    for name in names {
        if let Some(rest) = text.strip_prefix(name).and_then(|r| r.trim_start().strip_prefix(':')) {
            text = rest.trim();
        }
    }
    let quoted = text.len() >= 2
        && ((text.starts_with('"') && text.ends_with('"')) || (text.starts_with('“') && text.ends_with('”')));
    if quoted {
        let inner = text.trim_start_matches(['"', '“']).trim_end_matches(['"', '”']);
        if !inner.contains(['"', '“', '”']) {
            text = inner.trim();
        }
    }
    text.to_string()
}

/// Renders a BdiInit prompt over `seed_transcript` (an already rendered
/// corpus episode), parses up to `k` sets and picks one with a seeded draw.
/// A parse failure is retried once at temperature 0.
pub fn init_bdi(
    client: &ModelClient,
    scenario: Scenario,
    seed_transcript: &str,
    k: usize,
    rng_seed: u64,
) -> Result<InitOutcome, AgentError> {
    if seed_transcript.trim().is_empty() {
        return Err(AgentError::Precondition("seed episode is empty".into()));
    }
    if k == 0 {
        return Err(AgentError::Precondition("k must be positive".into()));
    }
    let bindings = Bindings::new()
        .set("agent_name", scenario.display_name(AgentId::A))
        .set("recipient_name", scenario.display_name(AgentId::B))
        .set("corpus_dialogue_episode", seed_transcript)
        .set("top_k", k.to_string());
    let prompt = prompts::render(TemplateId::BdiInit, &bindings)?;
    let tag = TemplateId::BdiInit.as_str();
    let raw = client.complete(&GenerationRequest::new(tag, prompt.clone(), UTTERANCE_TEMPERATURE))?;
    let candidates = match prompts::parse_bdi_sets(&raw, k) {
        Ok(c) => c,
        Err(e) => {
            warn!(error = %e, "retrying BDI initialization at temperature 0");
            let raw = client.complete(&GenerationRequest::new(tag, prompt, DETERMINISTIC_TEMPERATURE))?;
            prompts::parse_bdi_sets(&raw, k)?
        }
    };
    let index = SeededRng::new(rng_seed).below(candidates.len() as u64) as usize;
    debug!(index, candidates = candidates.len(), "initialized BDI");
    Ok(InitOutcome { bdi: candidates[index].clone(), index, candidates })
}

/// Asks for the opposite or counterfactual version of `bdi`.
pub fn reverse_bdi(client: &ModelClient, scenario: Scenario, bdi: &BdiTriple) -> Result<BdiTriple, AgentError> {
    let bindings = Bindings::new()
        .set("agent_name", scenario.display_name(AgentId::A))
        .set("recipient_name", scenario.display_name(AgentId::B))
        .set("self_belief", bdi.belief())
        .set("self_desire", bdi.desire())
        .set("self_intention", bdi.intention());
    let prompt = prompts::render(TemplateId::ReverseBdi, &bindings)?;
    let raw =
        client.complete(&GenerationRequest::new(TemplateId::ReverseBdi.as_str(), prompt, UTTERANCE_TEMPERATURE))?;
    let mut sets = prompts::parse_bdi_sets(&raw, 1)?;
    Ok(sets.remove(0))
}

/// A's next utterance from its true BDI, the history and its latest
/// judgment (a SAY placeholder before the first one exists).
pub fn generate_self_utterance(
    client: &ModelClient,
    state: &SelfAgentState,
    history: &DialogueHistory,
) -> Result<String, AgentError> {
    if history.next_speaker() != AgentId::A {
        return Err(AgentError::Precondition("it is not A's turn".into()));
    }
    let judgment = state.last_judgment.clone().unwrap_or_else(Judgment::bootstrap);
    let bdi = state.true_bdi();
    let bindings = Bindings::new()
        .set("agent_name", state.display_name())
        .set("recipient_name", state.recipient_name())
        .set("conversation_history", history.render(&state.names())?)
        .set("self_belief", bdi.belief())
        .set("self_desire", bdi.desire())
        .set("self_intention", bdi.intention())
        .set("judgment", judgment.decision.to_string())
        .set("judgement_reason", judgment.reason)
        .set("seek_goal", state.scenario.seek_goal());
    let prompt = prompts::render(TemplateId::SelfUtterance, &bindings)?;
    let raw =
        client.complete(&GenerationRequest::new(TemplateId::SelfUtterance.as_str(), prompt, UTTERANCE_TEMPERATURE))?;
    let text = clean_utterance(&raw, &[state.display_name()]);
    if text.is_empty() {
        return Err(BackendError::EmptyCompletion(TemplateId::SelfUtterance.as_str().into()).into());
    }
    Ok(text)
}

/// Second-order judgment. Stores the result on `state`; the flag is set
/// when the reply had no decision token and SAY was assumed.
pub fn judge_second_order(
    client: &ModelClient,
    state: &mut SelfAgentState,
    history: &DialogueHistory,
) -> Result<(Judgment, bool), AgentError> {
    if history.count_by(AgentId::B) == 0 {
        return Err(AgentError::Precondition("judgment needs at least one reply from B".into()));
    }
    let bdi = state.true_bdi();
    let bindings = Bindings::new()
        .set("agent_name", state.display_name())
        .set("recipient_name", state.recipient_name())
        .set("conversation_history", history.render(&state.names())?)
        .set("belief", bdi.belief())
        .set("desire", bdi.desire())
        .set("intention", bdi.intention());
    let prompt = prompts::render(TemplateId::SecondOrderJudgment, &bindings)?;
    let raw = client.complete(&GenerationRequest::new(
        TemplateId::SecondOrderJudgment.as_str(),
        prompt,
        DETERMINISTIC_TEMPERATURE,
    ))?;
    let (judgment, fallback) = prompts::judgment_or_say(&raw);
    state.last_judgment = Some(judgment.clone());
    Ok((judgment, fallback))
}
