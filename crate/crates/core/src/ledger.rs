//! Confidence ledgers: a ranked list of candidate statements for one facet,
//! each carrying a confidence in percentage points.
//!
//! A normalized ledger satisfies:
//! - confidences sum to 100 (within ±0.5; normalization lands exactly on 100.00),
//! - confidences are pairwise distinct and strictly descending,
//! - length ≤ capacity when capacity is enforced.
//!
//! Normalization works in integer hundredths of a point. Values are rescaled
//! proportionally, rounded with the largest-remainder method so the total is
//! exactly 10000 hundredths, and then separated so neighbours differ by at
//! least 0.02. Separation is an isotonic fit of `c[i] + 2i`: tied entries are
//! spread symmetrically around their common value (a two-way tie at 40 becomes
//! 40.01 / 39.99) and list position decides who goes up. Entries that reach
//! zero are dropped.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::Facet;

/// Hundredths of a percentage point in a full ledger.
const FULL_MASS: i64 = 10_000;
/// Minimum separation between neighbours, in hundredths.
const MIN_GAP: i64 = 2;
const SUM_TOLERANCE: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("no `statement | N%` line could be parsed ({} lines rejected)", .warnings.len())]
    ParseFailure { warnings: Vec<ParseWarning> },
    #[error("plan target `{0}` matches no entry")]
    UnknownTarget(String),
    #[error("plan target `{0}` matches more than one entry")]
    AmbiguousTarget(String),
    #[error("plan deleted every entry")]
    EmptyResult,
    #[error("all confidences are zero")]
    ZeroMass,
    #[error("ledger is empty")]
    EmptyLedger,
    #[error("capacity must be at least 1")]
    InvalidCapacity,
    #[error("invalid entry `{statement}`: {reason}")]
    InvalidEntry { statement: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub statement: String,
    pub confidence: f64,
}

impl LedgerEntry {
    pub fn new(statement: impl Into<String>, confidence: f64) -> Self {
        Self { statement: statement.into(), confidence }
    }
}

impl fmt::Display for LedgerEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} | {:.2}%", self.statement, self.confidence)
    }
}

/// What to do when a ledger holds more entries than its capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityPolicy {
    /// Evict lowest-confidence entries, then renormalize.
    #[default]
    Evict,
    /// Keep every entry; the capacity is advisory.
    Tolerate,
}

impl CapacityPolicy {
    pub fn from_strict(strict: bool) -> Self {
        if strict {
            CapacityPolicy::Evict
        } else {
            CapacityPolicy::Tolerate
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    Add,
    Increase,
    Decrease,
    Delete,
}

/// One step of an update plan. `amount` is in percentage points and is
/// always positive; `Delete` carries none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOp {
    pub kind: PlanKind,
    pub target: String,
    pub amount: Option<f64>,
    /// The amount was not stated and a default was filled in.
    #[serde(default)]
    pub amount_defaulted: bool,
}

impl PlanOp {
    pub fn add(target: impl Into<String>, amount: f64) -> Self {
        Self::with_amount(PlanKind::Add, target, amount)
    }

    pub fn increase(target: impl Into<String>, amount: f64) -> Self {
        Self::with_amount(PlanKind::Increase, target, amount)
    }

    pub fn decrease(target: impl Into<String>, amount: f64) -> Self {
        Self::with_amount(PlanKind::Decrease, target, amount)
    }

    pub fn delete(target: impl Into<String>) -> Self {
        Self { kind: PlanKind::Delete, target: target.into(), amount: None, amount_defaulted: false }
    }

    fn with_amount(kind: PlanKind, target: impl Into<String>, amount: f64) -> Self {
        Self { kind, target: target.into(), amount: Some(amount.abs()), amount_defaulted: false }
    }

    pub fn defaulted(mut self) -> Self {
        self.amount_defaulted = true;
        self
    }
}

/// A line that looked like a ledger entry but could not be used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    /// 1-based line number within the parsed text.
    pub line: usize,
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLedger {
    pub ledger: ConfidenceLedger,
    pub warnings: Vec<ParseWarning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceLedger {
    facet: Facet,
    capacity: usize,
    entries: Vec<LedgerEntry>,
}

impl ConfidenceLedger {
    /// Builds a normalized ledger from raw `(statement, confidence)` pairs.
    /// Over-capacity input is truncated to the highest entries first.
    pub fn new(
        facet: Facet,
        capacity: usize,
        entries: impl IntoIterator<Item = (String, f64)>,
    ) -> Result<Self, LedgerError> {
        if capacity == 0 {
            return Err(LedgerError::InvalidCapacity);
        }
        let mut entries: Vec<LedgerEntry> = entries.into_iter().map(|(s, c)| LedgerEntry::new(s, c)).collect();
        validate_raw(&entries)?;
        sort_descending(&mut entries);
        entries.truncate(capacity);
        Self { facet, capacity, entries }.normalize()
    }

    pub fn facet(&self) -> Facet {
        self.facet
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.confidence).sum()
    }

    pub fn top1(&self) -> Result<&LedgerEntry, LedgerError> {
        self.entries
            .iter()
            .reduce(|best, e| if e.confidence > best.confidence { e } else { best })
            .ok_or(LedgerError::EmptyLedger)
    }

    /// `<statement> | <confidence>%` per entry, two decimals, one per line.
    pub fn serialize(&self) -> String {
        self.entries.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")
    }

    /// Rescales to 100, separates ties and restores descending order.
    pub fn normalize(&self) -> Result<Self, LedgerError> {
        let mut entries = self.entries.clone();
        sort_descending(&mut entries);
        let mut values: Vec<f64> = entries.iter().map(|e| e.confidence.clamp(0.0, 100.0)).collect();

        loop {
            // zero-confidence entries are deleted, matching the plan strategy list
            let keep: Vec<bool> = values.iter().map(|&v| v > 0.0).collect();
            if !keep.iter().any(|&k| k) {
                return Err(if entries.is_empty() { LedgerError::EmptyLedger } else { LedgerError::ZeroMass });
            }
            retain_mask(&mut entries, &keep);
            retain_mask(&mut values, &keep);

            let separated = separate(&quantize(&values));
            if separated.iter().all(|&c| c > 0) {
                for (entry, &c) in entries.iter_mut().zip(&separated) {
                    entry.confidence = c as f64 / 100.0;
                }
                return Ok(Self { facet: self.facet, capacity: self.capacity, entries });
            }
            values = separated.iter().map(|&c| c as f64 / 100.0).collect();
        }
    }

    /// Applies `ops` in order, then normalizes. Under [`CapacityPolicy::Evict`]
    /// the lowest entries beyond capacity are dropped and the rest renormalized.
    pub fn apply_plan(&self, ops: &[PlanOp], policy: CapacityPolicy) -> Result<Self, LedgerError> {
        let mut entries = self.entries.clone();
        for op in ops {
            let amount = op.amount.unwrap_or(0.0).abs();
            match op.kind {
                PlanKind::Add => {
                    if op.target.trim().is_empty() {
                        return Err(LedgerError::InvalidEntry {
                            statement: op.target.clone(),
                            reason: "empty statement".into(),
                        });
                    }
                    // re-adding a known statement raises it instead of duplicating it
                    match find_exact(&entries, &op.target) {
                        Some(i) => entries[i].confidence = (entries[i].confidence + amount).clamp(0.0, 100.0),
                        None => entries.push(LedgerEntry::new(op.target.trim(), amount.clamp(0.0, 100.0))),
                    }
                }
                PlanKind::Increase | PlanKind::Decrease => {
                    let i = find_target(&entries, &op.target)?;
                    let delta = if op.kind == PlanKind::Increase { amount } else { -amount };
                    entries[i].confidence = (entries[i].confidence + delta).clamp(0.0, 100.0);
                }
                PlanKind::Delete => {
                    let i = find_target(&entries, &op.target)?;
                    entries.remove(i);
                }
            }
        }
        if entries.is_empty() {
            return Err(LedgerError::EmptyResult);
        }
        let normalized = Self { facet: self.facet, capacity: self.capacity, entries }.normalize()?;
        match policy {
            CapacityPolicy::Evict if normalized.len() > normalized.capacity => {
                let mut entries = normalized.entries;
                entries.truncate(normalized.capacity);
                Self { facet: self.facet, capacity: self.capacity, entries }.normalize()
            }
            _ => Ok(normalized),
        }
    }

    /// Plan ops that turn `self` into `target`: matched statements become
    /// Increase/Decrease by the difference, new ones Add, missing ones Delete.
    pub fn diff_plan(&self, target: &ConfidenceLedger) -> Vec<PlanOp> {
        let mut ops = Vec::new();
        let mut matched = vec![false; self.entries.len()];
        for entry in &target.entries {
            match find_exact(&self.entries, &entry.statement) {
                Some(i) if !matched[i] => {
                    matched[i] = true;
                    let old = &self.entries[i];
                    let delta = round2(entry.confidence - old.confidence);
                    if delta > 0.0 {
                        ops.push(PlanOp::increase(old.statement.clone(), delta));
                    } else if delta < 0.0 {
                        ops.push(PlanOp::decrease(old.statement.clone(), -delta));
                    }
                }
                _ => ops.push(PlanOp::add(entry.statement.clone(), entry.confidence)),
            }
        }
        for (entry, seen) in self.entries.iter().zip(matched) {
            if !seen {
                ops.push(PlanOp::delete(entry.statement.clone()));
            }
        }
        ops
    }

    /// Human-readable problems with this ledger; empty when all invariants hold.
    pub fn invariant_violations(&self, policy: CapacityPolicy) -> Vec<String> {
        let mut problems = Vec::new();
        if self.entries.is_empty() {
            problems.push("ledger has no entries".to_string());
            return problems;
        }
        if policy == CapacityPolicy::Evict && self.entries.len() > self.capacity {
            problems.push(format!("{} entries exceed capacity {}", self.entries.len(), self.capacity));
        }
        let total = self.total();
        if (total - 100.0).abs() > SUM_TOLERANCE {
            problems.push(format!("confidences sum to {total:.4}"));
        }
        for e in &self.entries {
            if e.statement.trim().is_empty() {
                problems.push("empty statement".to_string());
            }
            if !(0.0..=100.0).contains(&e.confidence) {
                problems.push(format!("confidence {} out of range", e.confidence));
            }
        }
        for pair in self.entries.windows(2) {
            if pair[0].confidence <= pair[1].confidence {
                problems.push(format!(
                    "confidences not strictly descending: {} then {}",
                    pair[0].confidence, pair[1].confidence
                ));
            }
        }
        problems
    }
}

/// Parses `statement | N% …` lines. Lines without `|` are ignored; lines
/// with `|` but no usable number are reported as warnings. The result is
/// sorted, truncated to `k` and normalized when the total is off or two
/// entries tie at two-decimal precision.
pub fn parse_ranked_list(raw: &str, facet: Facet, k: usize) -> Result<ParsedLedger, LedgerError> {
    static ENTRY: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"^(?P<stmt>.*)\|\s*\**\s*(?P<num>[+-]?\d+(?:\.\d+)?)\s*%?").unwrap());
    if k == 0 {
        return Err(LedgerError::InvalidCapacity);
    }
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if !line.contains('|') {
            continue;
        }
        let warn = |reason: &str| ParseWarning { line: idx + 1, text: line.to_string(), reason: reason.into() };
        let Some(caps) = ENTRY.captures(line) else {
            warnings.push(warn("non-numeric confidence"));
            continue;
        };
        let statement = clean_statement(&caps["stmt"]);
        if statement.is_empty() {
            warnings.push(warn("empty statement"));
            continue;
        }
        match caps["num"].parse::<f64>() {
            Ok(v) if (0.0..=100.0).contains(&v) => entries.push(LedgerEntry::new(statement, v)),
            Ok(_) => warnings.push(warn("confidence outside [0, 100]")),
            Err(_) => warnings.push(warn("non-numeric confidence")),
        }
    }
    if entries.is_empty() {
        return Err(LedgerError::ParseFailure { warnings });
    }
    sort_descending(&mut entries);
    entries.truncate(k);
    let ledger = ConfidenceLedger { facet, capacity: k, entries };
    let total = ledger.total();
    let tied = ledger.entries.windows(2).any(|p| round2(p[0].confidence) == round2(p[1].confidence));
    let zero = ledger.entries.iter().any(|e| e.confidence <= 0.0);
    let ledger = if tied || zero || (total - 100.0).abs() > SUM_TOLERANCE { ledger.normalize()? } else { ledger };
    Ok(ParsedLedger { ledger, warnings })
}

/// Strips list markers, surrounding quotes and a trailing period.
fn clean_statement(raw: &str) -> String {
    static MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(?:[-*•]+|\d+[.)]|\(\d+\))?\s*").unwrap());
    let s = MARKER.replace(raw, "");
    let s = s.trim().trim_matches(|c| c == '*' || c == '"' || c == '“' || c == '”').trim();
    s.strip_suffix('.').unwrap_or(s).trim().to_string()
}

fn validate_raw(entries: &[LedgerEntry]) -> Result<(), LedgerError> {
    for e in entries {
        if e.statement.trim().is_empty() {
            return Err(LedgerError::InvalidEntry { statement: e.statement.clone(), reason: "empty statement".into() });
        }
        if !e.confidence.is_finite() || !(0.0..=100.0).contains(&e.confidence) {
            return Err(LedgerError::InvalidEntry {
                statement: e.statement.clone(),
                reason: format!("confidence {} outside [0, 100]", e.confidence),
            });
        }
    }
    Ok(())
}

/// Stable descending sort: equal confidences keep their list order.
fn sort_descending(entries: &mut [LedgerEntry]) {
    entries.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
}

fn retain_mask<T>(items: &mut Vec<T>, keep: &[bool]) {
    let mut it = keep.iter();
    items.retain(|_| *it.next().unwrap_or(&false));
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Proportional rescale to [`FULL_MASS`] hundredths, largest remainder first
/// (earlier position wins remainder ties).
fn quantize(values: &[f64]) -> Vec<i64> {
    let total: f64 = values.iter().sum();
    let scaled: Vec<f64> = values.iter().map(|v| v * FULL_MASS as f64 / total).collect();
    let mut out: Vec<i64> = scaled.iter().map(|s| (s + 1e-9).floor() as i64).collect();
    let mut short = FULL_MASS - out.iter().sum::<i64>();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = scaled[a] - out[a] as f64;
        let fb = scaled[b] - out[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut cursor = order.iter().cycle();
    while short != 0 {
        let &i = cursor.next().expect("non-empty");
        if short > 0 {
            out[i] += 1;
            short -= 1;
        } else if out[i] > 0 {
            out[i] -= 1;
            short += 1;
        }
    }
    out
}

/// Non-increasing isotonic fit of `c[i] + MIN_GAP·i` (pool adjacent
/// violators, integer-valued blocks), mapped back by subtracting the offset.
/// Sum is preserved exactly and neighbours end up at least `MIN_GAP` apart.
fn separate(values: &[i64]) -> Vec<i64> {
    struct Block {
        len: i64,
        total: i64,
    }
    impl Block {
        // first `r` members get q+1, the rest q
        fn first(&self) -> i64 {
            self.total.div_euclid(self.len) + i64::from(self.total.rem_euclid(self.len) > 0)
        }
        fn last(&self) -> i64 {
            self.total.div_euclid(self.len)
        }
    }

    let mut blocks: Vec<Block> = Vec::with_capacity(values.len());
    for (i, &c) in values.iter().enumerate() {
        blocks.push(Block { len: 1, total: c + MIN_GAP * i as i64 });
        while blocks.len() > 1 {
            let n = blocks.len();
            if blocks[n - 2].last() >= blocks[n - 1].first() {
                break;
            }
            let tail = blocks.pop().expect("len > 1");
            let head = blocks.last_mut().expect("len > 0");
            head.len += tail.len;
            head.total += tail.total;
        }
    }

    let mut out = Vec::with_capacity(values.len());
    for block in &blocks {
        let q = block.total.div_euclid(block.len);
        let r = block.total.rem_euclid(block.len);
        for j in 0..block.len {
            out.push(q + i64::from(j < r));
        }
    }
    out.iter().enumerate().map(|(i, e)| e - MIN_GAP * i as i64).collect()
}

fn find_exact(entries: &[LedgerEntry], target: &str) -> Option<usize> {
    let t = target.trim();
    entries
        .iter()
        .position(|e| e.statement == t)
        .or_else(|| entries.iter().position(|e| e.statement.to_lowercase() == t.to_lowercase()))
}

/// Exact (then case-insensitive) equality, then case-insensitive containment
/// in either direction. More than one containment match is ambiguous.
fn find_target(entries: &[LedgerEntry], target: &str) -> Result<usize, LedgerError> {
    if let Some(i) = find_exact(entries, target) {
        return Ok(i);
    }
    let t = target.trim().trim_end_matches('.').to_lowercase();
    if t.is_empty() {
        return Err(LedgerError::UnknownTarget(target.to_string()));
    }
    let hits: Vec<usize> = entries
        .iter()
        .enumerate()
        .filter(|(_, e)| {
            let s = e.statement.to_lowercase();
            s.contains(&t) || t.contains(&s)
        })
        .map(|(i, _)| i)
        .collect();
    match hits.as_slice() {
        [i] => Ok(*i),
        [] => Err(LedgerError::UnknownTarget(target.to_string())),
        _ => Err(LedgerError::AmbiguousTarget(target.to_string())),
    }
}
