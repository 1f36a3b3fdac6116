//! Agent B: infers A's beliefs, desires and intentions as confidence
//! ledgers and replies from its best guess.
//!
//! Four variants share one state type. `NoTom` answers from the history
//! alone, `Vanilla` re-elicits a single best guess every round,
//! `Reflection` revises its ledgers from a reflection prompt, and `Cr`
//! adds foresight plus a counterfactual branch chosen by comparing the
//! similarity of a virtual response (`S_v`) with that of the prediction.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::backend::{BackendError, GenerationRequest, ModelClient, ScoreKind, SimilarityProbe};
use crate::dialogue::{AgentId, BdiTriple, DialogueHistory, Facet, Scenario};
use crate::ledger::{parse_ranked_list, CapacityPolicy, ConfidenceLedger, LedgerError, ParsedLedger};
use crate::prompts::{self, Bindings, PromptError, TemplateId};
use crate::self_agent::{clean_utterance, AgentError, DETERMINISTIC_TEMPERATURE, UTTERANCE_TEMPERATURE};

/// Upper bound on entries read from an "Updated" section before the
/// capacity policy is applied.
const UPDATED_SECTION_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NoTom,
    Vanilla,
    Reflection,
    Cr,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::NoTom => "no_tom",
            Variant::Vanilla => "vanilla",
            Variant::Reflection => "reflection",
            Variant::Cr => "cr",
        }
    }

    /// Whether B predicts A's next utterance and scores it.
    pub fn uses_foresight(self) -> bool {
        matches!(self, Variant::Reflection | Variant::Cr)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "no_tom" | "notom" | "none" | "baseline" => Ok(Variant::NoTom),
            "vanilla" => Ok(Variant::Vanilla),
            "reflection" => Ok(Variant::Reflection),
            "cr" | "counterfactual" => Ok(Variant::Cr),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

/// When the counterfactual branch is considered, comparing this round's
/// similarity `S_{i+1}` with the previous one `S_i` (`S_0 = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerPolicy {
    #[default]
    OnIncrease,
    OnNonIncrease,
}

impl TriggerPolicy {
    pub fn triggered(self, s_prev: f64, s_curr: f64) -> bool {
        match self {
            TriggerPolicy::OnIncrease => s_curr > s_prev,
            TriggerPolicy::OnNonIncrease => s_curr <= s_prev,
        }
    }
}

impl FromStr for TriggerPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "on_increase" | "increase" => Ok(TriggerPolicy::OnIncrease),
            "on_non_increase" | "non_increase" => Ok(TriggerPolicy::OnNonIncrease),
            other => Err(format!("unknown trigger policy `{other}`")),
        }
    }
}

/// Which similarity `S_v` must beat for the counterfactual update to win.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvBaseline {
    /// This round's `S_{i+1}`.
    #[default]
    Current,
    /// The previous round's `S_i`.
    Previous,
}

impl FromStr for SvBaseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "current" => Ok(SvBaseline::Current),
            "previous" => Ok(SvBaseline::Previous),
            other => Err(format!("unknown S_v baseline `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdatePath {
    Counterfactual,
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub policy: TriggerPolicy,
    pub s_prev: f64,
    pub s_curr: f64,
    pub triggered: bool,
    pub s_v: Option<f64>,
    pub path: UpdatePath,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub variant: Variant,
    pub top_k: usize,
    pub cf_trigger_policy: TriggerPolicy,
    pub sv_baseline: SvBaseline,
    pub capacity: CapacityPolicy,
}

impl TrackerConfig {
    pub fn new(variant: Variant, top_k: usize) -> Self {
        Self {
            variant,
            top_k,
            cf_trigger_policy: TriggerPolicy::default(),
            sv_baseline: SvBaseline::default(),
            capacity: CapacityPolicy::Evict,
        }
    }

    /// Ledger size actually tracked: Vanilla keeps only its best guess.
    pub fn effective_k(&self) -> usize {
        if self.variant == Variant::Vanilla {
            1
        } else {
            self.top_k
        }
    }
}

/// Side products of one round's ledger update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundUpdate {
    /// Raw plan text per facet, when a reflection ran.
    pub plans: BTreeMap<Facet, String>,
    pub branch: Option<BranchRecord>,
    pub flags: Vec<String>,
}

/// Ledger produced from a reflection reply, not yet committed.
struct Resolved {
    ledger: Option<ConfidenceLedger>,
    plan_raw: String,
    reflection: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerState {
    pub config: TrackerConfig,
    pub scenario: Scenario,
    pub ledgers: BTreeMap<Facet, ConfidenceLedger>,
    pub predicted_next: Option<String>,
    /// The prediction most recently compared against a real utterance.
    pub last_scored_prediction: Option<String>,
    pub similarity_history: Vec<f64>,
    pub reflection_history: Vec<String>,
}

impl TrackerState {
    pub fn new(config: TrackerConfig, scenario: Scenario) -> Self {
        Self {
            config,
            scenario,
            ledgers: BTreeMap::new(),
            predicted_next: None,
            last_scored_prediction: None,
            similarity_history: Vec::new(),
            reflection_history: Vec::new(),
        }
    }

    fn name(&self) -> &'static str {
        self.scenario.display_name(AgentId::B)
    }

    fn target(&self) -> &'static str {
        self.scenario.display_name(AgentId::A)
    }

    fn rendered(&self, history: &DialogueHistory) -> Result<String, AgentError> {
        Ok(history.render(&self.scenario.names())?)
    }

    pub fn initialized(&self) -> bool {
        Facet::ALL.iter().all(|f| self.ledgers.contains_key(f))
    }

    fn ledger(&self, facet: Facet) -> Result<&ConfidenceLedger, AgentError> {
        self.ledgers.get(&facet).ok_or_else(|| AgentError::Precondition(format!("no {facet} ledger initialized")))
    }

    /// Top-1 statement of every facet.
    pub fn top_triple(&self) -> Result<BdiTriple, AgentError> {
        let top = |f| -> Result<String, AgentError> { Ok(self.ledger(f)?.top1()?.statement.clone()) };
        Ok(BdiTriple::new(top(Facet::Belief)?, top(Facet::Desire)?, top(Facet::Intention)?)?)
    }

    /// Elicits a ranked list of `k` candidates for `facet`, retrying once
    /// when nothing parses.
    pub fn infer_topk(
        &self,
        client: &ModelClient,
        history: &DialogueHistory,
        facet: Facet,
        k: usize,
    ) -> Result<ParsedLedger, AgentError> {
        if history.count_by(AgentId::A) == 0 {
            return Err(AgentError::Precondition("inference needs at least one utterance from A".into()));
        }
        let persona = self.scenario.tracker_persona();
        let bindings = Bindings::new()
            .set("agent_name", self.name())
            .set("recipient_name", self.target())
            .set("conversation_history", self.rendered(history)?)
            .set("self_belief", persona.belief())
            .set("self_desire", persona.desire())
            .set("self_intention", persona.intention())
            .set("top_k", k.to_string())
            .set("picked_type", facet.as_str());
        let prompt = prompts::render(TemplateId::InferTopK, &bindings)?;
        let tag = format!("{}/{facet}", TemplateId::InferTopK);
        let raw = client.complete(&GenerationRequest::new(tag.clone(), prompt.clone(), DETERMINISTIC_TEMPERATURE))?;
        match parse_ranked_list(&raw, facet, k) {
            Ok(parsed) => Ok(parsed),
            Err(e) => {
                warn!(%facet, error = %e, "retrying ledger inference");
                let raw = client.complete(&GenerationRequest::new(tag, prompt, DETERMINISTIC_TEMPERATURE))?;
                Ok(parse_ranked_list(&raw, facet, k)?)
            }
        }
    }

    /// Fills all three ledgers from scratch.
    pub fn initialize(
        &mut self,
        client: &ModelClient,
        history: &DialogueHistory,
        flags: &mut Vec<String>,
    ) -> Result<(), AgentError> {
        let k = self.config.effective_k();
        for facet in Facet::ALL {
            let parsed = self.infer_topk(client, history, facet, k)?;
            if !parsed.warnings.is_empty() {
                flags.push(format!("ledger_parse_warning:{facet}"));
            }
            self.ledgers.insert(facet, parsed.ledger);
        }
        Ok(())
    }

    /// B's reply: from the history alone for `NoTom`, otherwise from the
    /// top-1 statement of each ledger.
    pub fn generate_utterance(&self, client: &ModelClient, history: &DialogueHistory) -> Result<String, AgentError> {
        let (id, bindings) = if self.config.variant == Variant::NoTom {
            let id = match self.scenario {
                Scenario::Empathetic => TemplateId::BaselineEmpathetic,
                Scenario::Persuasion => TemplateId::BaselinePersuasive,
            };
            let b = Bindings::new()
                .set("agent_name", self.name())
                .set("recipient_name", self.target())
                .set("corpus_dialogue_episode", self.rendered(history)?);
            (id, b)
        } else {
            let top = self.top_triple()?;
            let b = Bindings::new()
                .set("agent_name", self.name())
                .set("recipient_name", self.target())
                .set("conversation_history", self.rendered(history)?)
                .set("inferred_belief", top.belief())
                .set("inferred_desire", top.desire())
                .set("inferred_intention", top.intention())
                .set("response_goal", self.scenario.response_goal());
            (TemplateId::UtterFromInferred, b)
        };
        let prompt = prompts::render(id, &bindings)?;
        let raw = client.complete(&GenerationRequest::new(id.as_str(), prompt, UTTERANCE_TEMPERATURE))?;
        let text = clean_utterance(&raw, &[self.name()]);
        if text.is_empty() {
            return Err(BackendError::EmptyCompletion(id.as_str().into()).into());
        }
        Ok(text)
    }

    fn predict_with(
        &self,
        client: &ModelClient,
        history: &DialogueHistory,
        triple: &BdiTriple,
        tag: &str,
    ) -> Result<String, AgentError> {
        let inferred =
            format!("belief: {}; desire: {}; intention: {}", triple.belief(), triple.desire(), triple.intention());
        let bindings = Bindings::new()
            .set("agent_name", self.name())
            .set("recipient_name", self.target())
            .set("conversation_history", self.rendered(history)?)
            .set("picked_type", "belief, desire, and intention")
            .set("inferred_bid", inferred);
        let prompt = prompts::render(TemplateId::PredictResponse, &bindings)?;
        let raw = client.complete(&GenerationRequest::new(tag, prompt, UTTERANCE_TEMPERATURE))?;
        let text = clean_utterance(&raw, &[self.target()]);
        if text.is_empty() {
            return Err(BackendError::EmptyCompletion(tag.into()).into());
        }
        Ok(text)
    }

    /// Predicts A's next utterance from the top-1 statements. Overwriting an
    /// unscored prediction is reported through `flags`.
    pub fn predict_response(
        &mut self,
        client: &ModelClient,
        history: &DialogueHistory,
        flags: &mut Vec<String>,
    ) -> Result<String, AgentError> {
        let top = self.top_triple()?;
        let text = self.predict_with(client, history, &top, TemplateId::PredictResponse.as_str())?;
        if self.predicted_next.is_some() {
            flags.push("prediction_overwritten".into());
        }
        self.predicted_next = Some(text.clone());
        Ok(text)
    }

    /// Scores the pending prediction against A's real utterance and records
    /// the similarity.
    pub fn observe_and_score(&mut self, client: &ModelClient, real: &str, round: usize) -> Result<f64, AgentError> {
        let predicted = self
            .predicted_next
            .take()
            .ok_or_else(|| AgentError::Precondition("MissingPrediction: no prediction to score".into()))?;
        let s = client.score(&predicted, real, Some(SimilarityProbe { round, kind: ScoreKind::Foresight }))?;
        self.similarity_history.push(s);
        self.last_scored_prediction = Some(predicted);
        Ok(s)
    }

    fn reflection_history_text(&self) -> String {
        if self.reflection_history.is_empty() {
            "None".to_string()
        } else {
            self.reflection_history.join("\n")
        }
    }

    /// Turns a reflection reply into a candidate ledger. The "Updated"
    /// section wins when it parses; otherwise the plan ops are applied.
    fn resolve(&self, raw: &str, facet: Facet, flags: &mut Vec<String>) -> Result<Resolved, AgentError> {
        let old = self.ledger(facet)?;
        let k = self.config.top_k;
        let out = match prompts::parse_reflection(raw, k) {
            Ok(out) => out,
            Err(PromptError::NoSectionsFound) => {
                flags.push(format!("update_skipped:{facet}"));
                return Ok(Resolved { ledger: None, plan_raw: raw.trim().to_string(), reflection: String::new() });
            }
            Err(e) => return Err(e.into()),
        };
        let mut ledger = None;
        if !out.updated_ledger_raw.is_empty() {
            match parse_ranked_list(&out.updated_ledger_raw, facet, UPDATED_SECTION_LIMIT) {
                Ok(parsed) => {
                    if !parsed.warnings.is_empty() {
                        flags.push(format!("ledger_parse_warning:{facet}"));
                    }
                    let ops = old.diff_plan(&parsed.ledger);
                    match old.apply_plan(&ops, self.config.capacity) {
                        Ok(l) => ledger = Some(l),
                        Err(e) => debug!(%facet, error = %e, "updated section could not be applied"),
                    }
                }
                Err(e) => debug!(%facet, error = %e, "updated section did not parse"),
            }
        }
        if ledger.is_none() && !out.plan.is_empty() {
            if out.plan.iter().any(|op| op.amount_defaulted) {
                flags.push(format!("amount_defaulted:{facet}"));
            }
            match old.apply_plan(&out.plan, self.config.capacity) {
                Ok(l) => ledger = Some(l),
                Err(LedgerError::EmptyResult) => flags.push(format!("empty_result:{facet}")),
                Err(e) => debug!(%facet, error = %e, "plan could not be applied"),
            }
        }
        if ledger.is_none() {
            flags.push(format!("update_skipped:{facet}"));
        }
        Ok(Resolved { ledger, plan_raw: out.plan_raw, reflection: out.reflection })
    }

    fn commit(&mut self, facet: Facet, resolved: Resolved) -> String {
        if !resolved.reflection.is_empty() {
            self.reflection_history.push(format!("{facet}: {}", resolved.reflection));
        }
        if let Some(ledger) = resolved.ledger {
            self.ledgers.insert(facet, ledger);
        }
        resolved.plan_raw
    }

    /// Standard reflection for one facet. Returns the raw plan text; the
    /// ledger is left unchanged (and flagged) when no update can be read.
    pub fn reflect_and_update(
        &mut self,
        client: &ModelClient,
        history: &DialogueHistory,
        facet: Facet,
        flags: &mut Vec<String>,
    ) -> Result<String, AgentError> {
        let old = self.ledger(facet)?;
        let bindings = Bindings::new()
            .set("agent_name", self.name())
            .set("recipient_name", self.target())
            .set("conversation_history", self.rendered(history)?)
            .set("reflection_history", self.reflection_history_text())
            .set("picked_type", facet.as_str())
            .set("inferred_bdi", old.serialize().replace('\n', "; "))
            .set("top_k", self.config.top_k.to_string());
        let prompt = prompts::render(TemplateId::Reflect, &bindings)?;
        let tag = format!("{}/{facet}", TemplateId::Reflect);
        let raw = client.complete(&GenerationRequest::new(tag, prompt, DETERMINISTIC_TEMPERATURE))?;
        let resolved = self.resolve(&raw, facet, flags)?;
        Ok(self.commit(facet, resolved))
    }

    /// One counterfactual round for the `Cr` variant. `history` ends with
    /// A's real utterance, which the latest similarity was computed on.
    pub fn counterfactual_step(
        &mut self,
        client: &ModelClient,
        history: &DialogueHistory,
        round: usize,
        update: &mut RoundUpdate,
    ) -> Result<BranchRecord, AgentError> {
        let n = self.similarity_history.len();
        if n == 0 {
            return Err(AgentError::Precondition("counterfactual step needs a similarity for this round".into()));
        }
        let s_curr = self.similarity_history[n - 1];
        let s_prev = if n >= 2 { self.similarity_history[n - 2] } else { 0.0 };
        let policy = self.config.cf_trigger_policy;
        let triggered = policy.triggered(s_prev, s_curr);
        let mut record = BranchRecord { policy, s_prev, s_curr, triggered, s_v: None, path: UpdatePath::Standard };

        if triggered {
            let real = history
                .last()
                .filter(|u| u.speaker == AgentId::A)
                .map(|u| u.text.clone())
                .ok_or_else(|| AgentError::Precondition("history must end with A's utterance".into()))?;
            let predicted = self.last_scored_prediction.clone().unwrap_or_default();
            let mut candidates = Vec::new();
            let mut cf_flags = Vec::new();
            for facet in Facet::ALL {
                let old = self.ledger(facet)?;
                let bindings = Bindings::new()
                    .set("agent_name", self.name())
                    .set("recipient_name", self.target())
                    .set("conversation_history", self.rendered(history)?)
                    .set("reflection_history", self.reflection_history_text())
                    .set("picked_type", facet.as_str())
                    .set("inferred_bdi", old.serialize().replace('\n', "; "))
                    .set("inferred_top_bdi", old.top1()?.statement.clone())
                    .set("predicted_response", predicted.clone())
                    .set("real_response", real.clone())
                    .set("top_k", self.config.top_k.to_string());
                let prompt = prompts::render(TemplateId::CounterfactualReflect, &bindings)?;
                let tag = format!("{}/{facet}", TemplateId::CounterfactualReflect);
                let raw = client.complete(&GenerationRequest::new(tag, prompt, DETERMINISTIC_TEMPERATURE))?;
                candidates.push((facet, self.resolve(&raw, facet, &mut cf_flags)?));
            }
            let top = |facet: Facet, r: &Resolved| -> Result<String, AgentError> {
                let ledger = match &r.ledger {
                    Some(l) => l,
                    None => self.ledger(facet)?,
                };
                Ok(ledger.top1()?.statement.clone())
            };
            let triple = BdiTriple::new(
                top(Facet::Belief, &candidates[0].1)?,
                top(Facet::Desire, &candidates[1].1)?,
                top(Facet::Intention, &candidates[2].1)?,
            )?;
            let before = history.prefix(history.len() - 1);
            let tag = format!("{}/virtual", TemplateId::PredictResponse);
            let virtual_response = self.predict_with(client, &before, &triple, &tag)?;
            let s_v =
                client.score(&virtual_response, &real, Some(SimilarityProbe { round, kind: ScoreKind::Virtual }))?;
            record.s_v = Some(s_v);
            let baseline = match self.config.sv_baseline {
                SvBaseline::Current => s_curr,
                SvBaseline::Previous => s_prev,
            };
            if s_v > baseline {
                record.path = UpdatePath::Counterfactual;
                update.flags.extend(cf_flags);
                for (facet, resolved) in candidates {
                    let plan = self.commit(facet, resolved);
                    update.plans.insert(facet, plan);
                }
            }
        }
        if record.path == UpdatePath::Standard {
            for facet in Facet::ALL {
                let plan = self.reflect_and_update(client, history, facet, &mut update.flags)?;
                update.plans.insert(facet, plan);
            }
        }
        debug!(round, ?record, "counterfactual step");
        Ok(record)
    }

    /// The variant's ledger update for a round whose A-utterance has just
    /// been appended (and scored, when a prediction was pending).
    pub fn update_round(
        &mut self,
        client: &ModelClient,
        history: &DialogueHistory,
        round: usize,
        scored: bool,
    ) -> Result<RoundUpdate, AgentError> {
        let mut update = RoundUpdate::default();
        match self.config.variant {
            Variant::NoTom => {}
            Variant::Vanilla => self.initialize(client, history, &mut update.flags)?,
            Variant::Reflection | Variant::Cr if !self.initialized() => {
                self.initialize(client, history, &mut update.flags)?
            }
            Variant::Reflection => {
                for facet in Facet::ALL {
                    let plan = self.reflect_and_update(client, history, facet, &mut update.flags)?;
                    update.plans.insert(facet, plan);
                }
            }
            Variant::Cr if scored => {
                update.branch = Some(self.counterfactual_step(client, history, round, &mut update)?);
            }
            Variant::Cr => {
                for facet in Facet::ALL {
                    let plan = self.reflect_and_update(client, history, facet, &mut update.flags)?;
                    update.plans.insert(facet, plan);
                }
            }
        }
        Ok(update)
    }
}
