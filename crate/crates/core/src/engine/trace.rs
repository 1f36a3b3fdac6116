//! JSON Lines trace files: one `turn` line per round and one `summary` line
//! per episode, plus the run manifest. See `docs/trace-schema.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{EngineError, EpisodeConfig, EpisodeResult, TraceLedgers, TurnTrace};
use crate::dialogue::{BdiTriple, Decision, Facet, Judgment};
use crate::ledger::ConfidenceLedger;
use crate::prompts::TemplateRegistry;

const SUM_TOLERANCE: f64 = 0.5;

const TURN_KEYS: [&str; 13] = [
    "episode_id",
    "round",
    "a_utt",
    "b_utt",
    "pred_utt",
    "s",
    "s_v",
    "branch",
    "ledgers",
    "plan",
    "judgment",
    "truth_sim",
    "flags",
];
const SUMMARY_KEYS: [&str; 6] = ["episode_id", "config", "success", "aborted", "rounds_used", "final_judgment"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode_id: String,
    pub config: EpisodeConfig,
    pub success: bool,
    pub aborted: Option<String>,
    pub rounds_used: usize,
    pub final_judgment: Option<Judgment>,
    pub true_bdi: Option<BdiTriple>,
    pub original_bdi: Option<BdiTriple>,
    pub init_index: Option<usize>,
    pub final_ledgers: BTreeMap<Facet, ConfidenceLedger>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceLine {
    Turn(TurnTrace),
    Summary(EpisodeSummary),
}

fn io_err(path: &Path, e: impl ToString) -> EngineError {
    EngineError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn lines_of(result: &EpisodeResult) -> impl Iterator<Item = TraceLine> + '_ {
    let summary = EpisodeSummary {
        episode_id: result.episode_id.clone(),
        config: result.config.clone(),
        success: result.success,
        aborted: result.aborted.clone(),
        rounds_used: result.rounds_used,
        final_judgment: result.final_judgment.clone(),
        true_bdi: result.true_bdi.clone(),
        original_bdi: result.original_bdi.clone(),
        init_index: result.init_index,
        final_ledgers: result.final_ledgers.clone(),
    };
    result.traces.iter().cloned().map(TraceLine::Turn).chain(std::iter::once(TraceLine::Summary(summary)))
}

/// Writes every episode's turn lines followed by its summary line.
pub fn write_traces(results: &[EpisodeResult], path: &Path) -> Result<(), EngineError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for result in results {
        for line in lines_of(result) {
            let json = serde_json::to_string(&line).map_err(|e| io_err(path, e))?;
            writeln!(out, "{json}").map_err(|e| io_err(path, e))?;
        }
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// Reads a trace file back into episode results, in file order.
pub fn read_traces(path: &Path) -> Result<Vec<EpisodeResult>, EngineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut results = Vec::new();
    let mut pending: Vec<TurnTrace> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine = serde_json::from_str(line).map_err(|e| EngineError::TraceFormat {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        match parsed {
            TraceLine::Turn(t) => pending.push(t),
            TraceLine::Summary(s) => {
                let traces: Vec<TurnTrace> = std::mem::take(&mut pending);
                if let Some(t) = traces.iter().find(|t| t.episode_id != s.episode_id) {
                    return Err(EngineError::TraceFormat {
                        path: path.display().to_string(),
                        line: idx + 1,
                        message: format!("turn for {} precedes summary of {}", t.episode_id, s.episode_id),
                    });
                }
                results.push(EpisodeResult {
                    episode_id: s.episode_id,
                    config: s.config,
                    success: s.success,
                    aborted: s.aborted,
                    rounds_used: s.rounds_used,
                    final_judgment: s.final_judgment,
                    true_bdi: s.true_bdi,
                    original_bdi: s.original_bdi,
                    init_index: s.init_index,
                    final_ledgers: s.final_ledgers,
                    traces,
                });
            }
        }
    }
    if !pending.is_empty() {
        return Err(EngineError::TraceFormat {
            path: path.display().to_string(),
            line: text.lines().count(),
            message: "turn lines without a closing summary".into(),
        });
    }
    Ok(results)
}

/// Problems found in a trace file; valid when `errors` is empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub episodes: usize,
    pub turns: usize,
    pub errors: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

pub fn validate_trace_file(path: &Path) -> Result<ValidationReport, EngineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(validate_trace_text(&text))
}

fn check_ledger(entries: &[crate::engine::TraceEntry], cap: Option<usize>) -> Vec<String> {
    let mut problems = Vec::new();
    if entries.is_empty() {
        return problems;
    }
    let total: f64 = entries.iter().map(|e| e.conf).sum();
    if (total - 100.0).abs() > SUM_TOLERANCE {
        problems.push(format!("confidences sum to {total:.2}"));
    }
    if entries.windows(2).any(|w| w[0].conf <= w[1].conf) {
        problems.push("confidences not strictly descending".into());
    }
    if entries.iter().any(|e| e.text.trim().is_empty() || !(0.0..=100.0).contains(&e.conf)) {
        problems.push("entry with empty text or confidence outside [0, 100]".into());
    }
    if let Some(cap) = cap {
        if entries.len() > cap {
            problems.push(format!("{} entries exceed top_k {cap}", entries.len()));
        }
    }
    problems
}

fn check_turn(t: &TurnTrace, config: Option<&EpisodeConfig>, aborted: bool, errors: &mut Vec<String>) {
    let at = format!("{} round {}", t.episode_id, t.round);
    let mut err = |m: String| errors.push(format!("{at}: {m}"));
    if t.a_utt.trim().is_empty() && !aborted {
        err("empty a_utt".into());
    }
    for (name, v) in [("s", t.s), ("s_v", t.s_v), ("closing_s", t.closing_s)] {
        if let Some(v) = v {
            if !(0.0..=1.0).contains(&v) {
                err(format!("{name} = {v} outside [0, 1]"));
            }
        }
    }
    if t.s.is_some() && t.pred_utt.is_none() {
        err("s present without pred_utt".into());
    }
    let cap = config.filter(|c| c.strict_capacity).map(|c| c.top_k);
    for facet in Facet::ALL {
        for p in check_ledger(t.ledgers.get(facet), cap) {
            err(format!("{facet} ledger: {p}"));
        }
    }
    if let Some(b) = &t.branch {
        if b.triggered != b.policy.triggered(b.s_prev, b.s_curr) {
            err("branch.triggered disagrees with its policy".into());
        }
        if t.s != Some(b.s_curr) {
            err("branch.s_curr differs from s".into());
        }
        if b.s_v != t.s_v {
            err("branch.s_v differs from s_v".into());
        }
        if b.triggered != b.s_v.is_some() {
            err("s_v must be present exactly when the branch triggered".into());
        }
    }
    if aborted {
        return;
    }
    if t.b_utt.as_deref().is_none_or(|b| b.trim().is_empty()) {
        err("missing b_utt".into());
    }
    if t.judgment.is_none() {
        err("missing judgment".into());
    }
    if let Some(c) = config {
        if c.variant.uses_foresight() && t.round >= 2 && t.s.is_none() {
            err("foresight variant round without s".into());
        }
        if c.variant == crate::tracker::Variant::Cr && t.s.is_some() && t.branch.is_none() {
            err("scored CR round without branch record".into());
        }
    }
    if t.judgment.as_ref().is_some_and(Judgment::is_goodbye) != t.closing_utt.is_some() {
        err("closing_utt must be present exactly on a GOODBYE round".into());
    }
}

/// Checks key presence, types and the cross-field rules of every line.
pub fn validate_trace_text(text: &str) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut pending: Vec<TurnTrace> = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let n = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                report.errors.push(format!("line {n}: not JSON: {e}"));
                continue;
            }
        };
        let kind = value.get("kind").and_then(Value::as_str).unwrap_or_default().to_string();
        let required: &[&str] = match kind.as_str() {
            "turn" => &TURN_KEYS,
            "summary" => &SUMMARY_KEYS,
            other => {
                report.errors.push(format!("line {n}: unknown kind `{other}`"));
                continue;
            }
        };
        let missing: Vec<_> = required.iter().filter(|k| value.get(**k).is_none()).collect();
        if !missing.is_empty() {
            report.errors.push(format!("line {n}: missing keys {missing:?}"));
            continue;
        }
        if kind == "turn" {
            for facet in Facet::ALL {
                if value["ledgers"].get(facet.as_str()).is_none() {
                    report.errors.push(format!("line {n}: ledgers.{facet} missing"));
                }
            }
        }
        let parsed: TraceLine = match serde_json::from_value(value) {
            Ok(p) => p,
            Err(e) => {
                report.errors.push(format!("line {n}: {e}"));
                continue;
            }
        };
        match parsed {
            TraceLine::Turn(t) => {
                report.turns += 1;
                pending.push(t);
            }
            TraceLine::Summary(s) => {
                report.episodes += 1;
                let turns = std::mem::take(&mut pending);
                check_episode(&s, &turns, &mut report.errors);
                if !seen_ids.insert(s.episode_id.clone()) {
                    report.errors.push(format!("line {n}: duplicate episode {}", s.episode_id));
                }
            }
        }
    }
    if !pending.is_empty() {
        report.errors.push(format!("{} turn lines without a summary", pending.len()));
    }
    report
}

fn check_episode(s: &EpisodeSummary, turns: &[TurnTrace], errors: &mut Vec<String>) {
    let id = &s.episode_id;
    let aborted = s.aborted.is_some();
    for (i, t) in turns.iter().enumerate() {
        if t.episode_id != *id {
            errors.push(format!("{id}: contains a turn from {}", t.episode_id));
        }
        if t.round != i + 1 {
            errors.push(format!("{id}: round {} at position {}, expected {}", t.round, i + 1, i + 1));
        }
        let last = i + 1 == turns.len();
        check_turn(t, Some(&s.config), aborted && last, errors);
        if !last && t.judgment.as_ref().is_some_and(Judgment::is_goodbye) {
            errors.push(format!("{id}: GOODBYE before the final round"));
        }
    }
    if s.rounds_used != turns.len() {
        errors.push(format!("{id}: rounds_used {} but {} turn lines", s.rounds_used, turns.len()));
    }
    if s.rounds_used > s.config.max_rounds {
        errors.push(format!("{id}: rounds_used exceeds max_rounds"));
    }
    let last_decision = turns.last().and_then(|t| t.judgment.as_ref()).map(|j| j.decision);
    if s.success {
        if aborted {
            errors.push(format!("{id}: success and aborted at once"));
        }
        if last_decision != Some(Decision::Goodbye) {
            errors.push(format!("{id}: success without a final GOODBYE"));
        }
    } else if !aborted {
        if s.rounds_used != s.config.max_rounds {
            errors.push(format!("{id}: unsuccessful episode ended before max_rounds"));
        }
        if last_decision == Some(Decision::Goodbye) {
            errors.push(format!("{id}: final GOODBYE but success is false"));
        }
    }
    if s.final_judgment.as_ref().map(|j| j.decision) != last_decision && !aborted {
        errors.push(format!("{id}: final_judgment differs from the last turn's judgment"));
    }
    if let Some(last) = turns.last() {
        let snapshot = TraceLedgers::snapshot(&s.final_ledgers);
        if snapshot != last.ledgers {
            errors.push(format!("{id}: final_ledgers differ from the last snapshot"));
        }
    }
}

/// Resolved configuration and template checksums of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub config: Value,
    pub template_checksums: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config: Value, registry: &TemplateRegistry) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            template_checksums: registry.checksums(),
        }
    }
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), EngineError> {
    let json = serde_json::to_string_pretty(manifest).map_err(|e| io_err(path, e))?;
    std::fs::write(path, json + "\n").map_err(|e| io_err(path, e))
}
