//! Episode and batch orchestration.
//!
//! A round is: A speaks, B scores its pending prediction, B updates its
//! ledgers, B speaks, B predicts A's next utterance, A judges whether it has
//! been understood. A GOODBYE judgment is followed by A's closing utterance,
//! which is recorded on the last round and ends the episode.

mod trace;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::backend::{BackendError, ModelClient};
use crate::dialogue::{AgentId, BdiTriple, DialogueHistory, Facet, Judgment, Scenario};
use crate::ledger::{CapacityPolicy, ConfidenceLedger};
use crate::rng::{derive_seed, SeededRng};
use crate::self_agent::{self, AgentError, SelfAgentState};
use crate::tracker::{BranchRecord, SvBaseline, TrackerConfig, TrackerState, TriggerPolicy, Variant};

pub use trace::{
    read_traces, validate_trace_file, validate_trace_text, write_manifest, write_traces, Manifest, TraceLine,
    ValidationReport,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("need {needed} seed episodes, got {got}")]
    InsufficientSeeds { needed: usize, got: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path} line {line}: {message}")]
    TraceFormat { path: String, line: usize, message: String },
}

fn default_top_k() -> usize {
    3
}

fn default_max_rounds() -> usize {
    10
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub scenario: Scenario,
    pub variant: Variant,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub cf_trigger_policy: TriggerPolicy,
    #[serde(default)]
    pub sv_baseline: SvBaseline,
    #[serde(default)]
    pub reverse_probability: f64,
    /// Evict entries beyond `top_k` after every update.
    #[serde(default = "default_true")]
    pub strict_capacity: bool,
    /// Score each round's top-1 statements against A's true BDI.
    #[serde(default)]
    pub track_truth_similarity: bool,
}

impl EpisodeConfig {
    pub fn new(scenario: Scenario, variant: Variant) -> Self {
        Self {
            scenario,
            variant,
            top_k: default_top_k(),
            max_rounds: default_max_rounds(),
            rng_seed: 0,
            cf_trigger_policy: TriggerPolicy::default(),
            sv_baseline: SvBaseline::default(),
            reverse_probability: 0.0,
            strict_capacity: true,
            track_truth_similarity: false,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.top_k == 0 {
            return Err(EngineError::InvalidConfig("top_k must be at least 1".into()));
        }
        if self.max_rounds == 0 {
            return Err(EngineError::InvalidConfig("max_rounds must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.reverse_probability) {
            return Err(EngineError::InvalidConfig("reverse_probability must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            variant: self.variant,
            top_k: self.top_k,
            cf_trigger_policy: self.cf_trigger_policy,
            sv_baseline: self.sv_baseline,
            capacity: CapacityPolicy::from_strict(self.strict_capacity),
        }
    }
}

/// A ledger entry as written to traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub text: String,
    pub conf: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceLedgers {
    pub belief: Vec<TraceEntry>,
    pub desire: Vec<TraceEntry>,
    pub intention: Vec<TraceEntry>,
}

impl TraceLedgers {
    fn snapshot(ledgers: &BTreeMap<Facet, ConfidenceLedger>) -> Self {
        let entries = |f: Facet| {
            ledgers
                .get(&f)
                .map(|l| {
                    l.entries().iter().map(|e| TraceEntry { text: e.statement.clone(), conf: e.confidence }).collect()
                })
                .unwrap_or_default()
        };
        Self { belief: entries(Facet::Belief), desire: entries(Facet::Desire), intention: entries(Facet::Intention) }
    }

    pub fn get(&self, facet: Facet) -> &[TraceEntry] {
        match facet {
            Facet::Belief => &self.belief,
            Facet::Desire => &self.desire,
            Facet::Intention => &self.intention,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSimilarity {
    pub belief: f64,
    pub desire: f64,
    pub intention: f64,
}

/// Everything observable about one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnTrace {
    pub episode_id: String,
    pub round: usize,
    pub a_utt: String,
    pub b_utt: Option<String>,
    /// B's prediction of `a_utt`, made at the end of the previous round.
    pub pred_utt: Option<String>,
    pub s: Option<f64>,
    pub s_v: Option<f64>,
    pub branch: Option<BranchRecord>,
    pub ledgers: TraceLedgers,
    pub plan: Option<BTreeMap<Facet, String>>,
    pub judgment: Option<Judgment>,
    pub truth_sim: Option<TruthSimilarity>,
    /// A's farewell after a GOODBYE judgment, with the prediction made for it.
    #[serde(default)]
    pub closing_utt: Option<String>,
    #[serde(default)]
    pub closing_pred: Option<String>,
    #[serde(default)]
    pub closing_s: Option<f64>,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl TurnTrace {
    fn new(episode_id: &str, round: usize) -> Self {
        Self {
            episode_id: episode_id.to_string(),
            round,
            a_utt: String::new(),
            b_utt: None,
            pred_utt: None,
            s: None,
            s_v: None,
            branch: None,
            ledgers: TraceLedgers::default(),
            plan: None,
            judgment: None,
            truth_sim: None,
            closing_utt: None,
            closing_pred: None,
            closing_s: None,
            flags: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub config: EpisodeConfig,
    pub success: bool,
    /// Error that stopped the episode early, if any.
    pub aborted: Option<String>,
    pub rounds_used: usize,
    pub final_judgment: Option<Judgment>,
    pub true_bdi: Option<BdiTriple>,
    /// The initialized BDI before reversal, when reversal ran.
    pub original_bdi: Option<BdiTriple>,
    pub init_index: Option<usize>,
    pub final_ledgers: BTreeMap<Facet, ConfidenceLedger>,
    pub traces: Vec<TurnTrace>,
}

impl EpisodeResult {
    fn aborted(episode_id: &str, config: &EpisodeConfig, error: impl ToString) -> Self {
        Self {
            episode_id: episode_id.to_string(),
            config: config.clone(),
            success: false,
            aborted: Some(error.to_string()),
            rounds_used: 0,
            final_judgment: None,
            true_bdi: None,
            original_bdi: None,
            init_index: None,
            final_ledgers: BTreeMap::new(),
            traces: Vec::new(),
        }
    }

    pub fn is_aborted(&self) -> bool {
        self.aborted.is_some()
    }
}

fn unit_draw(seed: u64) -> f64 {
    (SeededRng::new(seed).next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Runs one episode to GOODBYE, the round cap, or the first backend error.
/// `seed_transcript` is the rendered corpus episode used to initialize A.
pub fn run_episode(
    client: &ModelClient,
    config: &EpisodeConfig,
    seed_transcript: &str,
    episode_id: &str,
) -> Result<EpisodeResult, EngineError> {
    config.validate()?;
    let init = match self_agent::init_bdi(client, config.scenario, seed_transcript, config.top_k, config.rng_seed) {
        Ok(init) => init,
        Err(e) => {
            warn!(episode_id, error = %e, "episode aborted during initialization");
            return Ok(EpisodeResult::aborted(episode_id, config, e));
        }
    };
    let mut result = EpisodeResult::aborted(episode_id, config, "");
    result.aborted = None;
    result.init_index = Some(init.index);
    let mut bdi = init.bdi;
    if config.reverse_probability > 0.0 && unit_draw(derive_seed(config.rng_seed, 1)) < config.reverse_probability {
        match self_agent::reverse_bdi(client, config.scenario, &bdi) {
            Ok(reversed) => {
                result.original_bdi = Some(bdi);
                bdi = reversed;
            }
            Err(e) => {
                result.aborted = Some(e.to_string());
                return Ok(result);
            }
        }
    }
    result.true_bdi = Some(bdi.clone());

    let mut agent = SelfAgentState::new(bdi, config.scenario);
    let mut tracker = TrackerState::new(config.tracker_config(), config.scenario);
    let mut history = DialogueHistory::new();

    for round in 1..=config.max_rounds {
        let mut trace = TurnTrace::new(episode_id, round);
        let outcome = play_round(client, config, &mut agent, &mut tracker, &mut history, &mut trace);
        trace.ledgers = TraceLedgers::snapshot(&tracker.ledgers);
        result.rounds_used = round;
        match outcome {
            Ok(done) => {
                result.final_judgment = trace.judgment.clone();
                result.traces.push(trace);
                if done {
                    result.success = true;
                    break;
                }
            }
            Err(e) => {
                warn!(episode_id, round, error = %e, "episode aborted");
                trace.flags.push("aborted".into());
                result.traces.push(trace);
                result.aborted = Some(e.to_string());
                break;
            }
        }
    }
    result.final_ledgers = tracker.ledgers;
    info!(episode_id, success = result.success, rounds = result.rounds_used, "episode finished");
    Ok(result)
}

/// One round; returns whether A said GOODBYE.
fn play_round(
    client: &ModelClient,
    config: &EpisodeConfig,
    agent: &mut SelfAgentState,
    tracker: &mut TrackerState,
    history: &mut DialogueHistory,
    trace: &mut TurnTrace,
) -> Result<bool, AgentError> {
    let round = trace.round;
    let a_utt = self_agent::generate_self_utterance(client, agent, history)?;
    *history = history.append_turn(AgentId::A, &a_utt)?;
    trace.a_utt = a_utt.clone();

    let mut scored = false;
    if tracker.predicted_next.is_some() {
        trace.pred_utt = tracker.predicted_next.clone();
        trace.s = Some(tracker.observe_and_score(client, &a_utt, round)?);
        scored = true;
    }
    let update = tracker.update_round(client, history, round, scored)?;
    trace.flags.extend(update.flags);
    if !update.plans.is_empty() {
        trace.plan = Some(update.plans);
    }
    if let Some(branch) = update.branch {
        trace.s_v = branch.s_v;
        trace.branch = Some(branch);
    }

    let b_utt = tracker.generate_utterance(client, history)?;
    *history = history.append_turn(AgentId::B, &b_utt)?;
    trace.b_utt = Some(b_utt);

    if config.track_truth_similarity && tracker.initialized() {
        let truth = agent.true_bdi();
        let sim = |facet: Facet| -> Result<f64, AgentError> {
            let top = tracker.ledgers[&facet].top1()?;
            Ok(client.score(&top.statement, truth.get(facet), None)?)
        };
        trace.truth_sim = Some(TruthSimilarity {
            belief: sim(Facet::Belief)?,
            desire: sim(Facet::Desire)?,
            intention: sim(Facet::Intention)?,
        });
    }

    if config.variant.uses_foresight() {
        tracker.predict_response(client, history, &mut trace.flags)?;
    }

    let (judgment, fallback) = self_agent::judge_second_order(client, agent, history)?;
    if fallback {
        trace.flags.push("judgment_fallback".into());
    }
    trace.judgment = Some(judgment.clone());
    if !judgment.is_goodbye() {
        return Ok(false);
    }

    let closing = self_agent::generate_self_utterance(client, agent, history)?;
    *history = history.append_turn(AgentId::A, &closing)?;
    if tracker.predicted_next.is_some() {
        trace.closing_pred = tracker.predicted_next.clone();
        trace.closing_s = Some(tracker.observe_and_score(client, &closing, round + 1)?);
    }
    trace.closing_utt = Some(closing);
    Ok(true)
}

/// Deterministic id for episode `index` of a batch.
pub fn episode_id(batch_seed: u64, index: usize) -> String {
    format!("ep-{batch_seed}-{index:04}")
}

/// Runs `n` episodes over `seeds[..n]` with up to `jobs` worker threads.
/// Episode `i` gets its own RNG seed derived from `(batch_seed, i)` and its
/// own client from `make_client(i)`. Results keep input order; a failing
/// episode is recorded as aborted without stopping the batch.
pub fn run_batch<F>(
    base: &EpisodeConfig,
    n: usize,
    seeds: &[String],
    batch_seed: u64,
    jobs: usize,
    make_client: F,
) -> Result<Vec<EpisodeResult>, EngineError>
where
    F: Fn(usize) -> Result<ModelClient, BackendError> + Sync,
{
    base.validate()?;
    if seeds.len() < n {
        return Err(EngineError::InsufficientSeeds { needed: n, got: seeds.len() });
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<EpisodeResult>>> = Mutex::new(vec![None; n]);
    let run_one = |i: usize| -> EpisodeResult {
        let mut config = base.clone();
        config.rng_seed = derive_seed(batch_seed, i as u64);
        let id = episode_id(batch_seed, i);
        match make_client(i) {
            Ok(client) => run_episode(&client, &config, &seeds[i], &id)
                .unwrap_or_else(|e| EpisodeResult::aborted(&id, &config, e)),
            Err(e) => EpisodeResult::aborted(&id, &config, e),
        }
    };
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, n.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let result = run_one(i);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(result);
            });
        }
    });
    Ok(slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect())
}

/// Per-round similarity between B's top-1 statement for `facet` and A's
/// true value. Rounds without a ledger snapshot are skipped.
pub fn truth_similarity_curve(
    client: &ModelClient,
    result: &EpisodeResult,
    facet: Facet,
) -> Result<Vec<(usize, f64)>, BackendError> {
    let Some(truth) = &result.true_bdi else {
        return Ok(Vec::new());
    };
    let mut curve = Vec::new();
    for trace in &result.traces {
        let Some(top) = trace.ledgers.get(facet).first() else {
            continue;
        };
        curve.push((trace.round, client.score(&top.text, truth.get(facet), None)?));
    }
    Ok(curve)
}
