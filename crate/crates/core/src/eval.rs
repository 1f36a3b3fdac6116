//! Episode metrics: average turn, success rate at the round limit,
//! precision/recall/F1 against annotator labels, and similarity-curve
//! summaries.
//!
//! Annotator scores live on a 0 to 5 scale and are normalized by 5 before
//! the strict threshold comparison. Precision or recall with a zero
//! denominator is reported as `None`, never as 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::Facet;
use crate::engine::EpisodeResult;

pub const DEFAULT_LABEL_THRESHOLD: f64 = 0.25;
/// Top-1 confidence (percent) at or above which a first-order guess counts
/// as a positive prediction.
pub const DEFAULT_PREDICTED_TAU: f64 = 50.0;
pub const MAX_ANNOTATION_SCORE: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no non-aborted results to evaluate")]
    NoResults,
    #[error("curve has no points")]
    EmptyCurve,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("annotation line {line}: {message}")]
    InvalidAnnotation { line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_error(path: &Path, e: impl ToString) -> EvalError {
    EvalError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// How aborted episodes enter AT and SR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortPolicy {
    #[default]
    Exclude,
    /// Aborted episodes count as failures for SR; AT still skips them.
    CountAsFailure,
}

fn completed(results: &[EpisodeResult]) -> impl Iterator<Item = &EpisodeResult> {
    results.iter().filter(|r| !r.is_aborted())
}

pub fn average_turn(results: &[EpisodeResult]) -> Result<f64, EvalError> {
    let rounds: Vec<usize> = completed(results).map(|r| r.rounds_used).collect();
    if rounds.is_empty() {
        return Err(EvalError::NoResults);
    }
    Ok(rounds.iter().sum::<usize>() as f64 / rounds.len() as f64)
}

pub fn success_rate(results: &[EpisodeResult], policy: AbortPolicy) -> Result<f64, EvalError> {
    let included: Vec<&EpisodeResult> = match policy {
        AbortPolicy::Exclude => completed(results).collect(),
        AbortPolicy::CountAsFailure => results.iter().collect(),
    };
    if included.is_empty() || completed(results).next().is_none() {
        return Err(EvalError::NoResults);
    }
    let wins = included.iter().filter(|r| r.success && !r.is_aborted()).count();
    Ok(wins as f64 / included.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationOrder {
    First,
    Second,
}

impl FromStr for AnnotationOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "first" | "1" | "first_order" => Ok(AnnotationOrder::First),
            "second" | "2" | "second_order" => Ok(AnnotationOrder::Second),
            other => Err(format!("unknown order `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub episode_id: String,
    pub facet: Facet,
    pub order: AnnotationOrder,
    pub scores: Vec<f64>,
    /// Externally supplied system label, overriding the built-in rule.
    #[serde(default)]
    pub predicted: Option<bool>,
}

impl AnnotationRecord {
    pub fn mean_score(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

/// Gold label: mean score over 5, strictly above `threshold`.
pub fn label_from_annotations(record: &AnnotationRecord, threshold: f64) -> bool {
    !record.scores.is_empty() && record.mean_score() / MAX_ANNOTATION_SCORE > threshold
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryOutcome {
    pub episode_id: String,
    pub facet: Facet,
    pub predicted: bool,
    pub gold: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub recall: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

pub fn prf1(outcomes: &[BinaryOutcome]) -> Prf1 {
    let mut m = Prf1::default();
    for o in outcomes {
        match (o.predicted, o.gold) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, true) => m.fn_ += 1,
            (false, false) => m.tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn_);
    m.f1 = match (m.precision, m.recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveStats {
    pub final_value: f64,
    pub max: f64,
    /// Share of consecutive pairs that do not decrease.
    pub monotone_fraction: f64,
}

pub fn curve_stats(curve: &[(usize, f64)]) -> Result<CurveStats, EvalError> {
    let (_, final_value) = *curve.last().ok_or(EvalError::EmptyCurve)?;
    let max = curve.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let monotone_fraction = if curve.len() == 1 {
        1.0
    } else {
        let ups = curve.windows(2).filter(|w| w[1].1 >= w[0].1).count();
        ups as f64 / (curve.len() - 1) as f64
    };
    Ok(CurveStats { final_value, max, monotone_fraction })
}

/// Built-in first-order prediction: the final top-1 confidence for `facet`
/// reaches `tau`. `None` when the episode tracked no ledger.
pub fn predicted_first_order(result: &EpisodeResult, facet: Facet, tau: f64) -> Option<bool> {
    let top = result.final_ledgers.get(&facet)?.entries().first()?;
    Some(top.confidence >= tau)
}

/// Built-in second-order prediction: A ended the episode with GOODBYE.
pub fn predicted_second_order(result: &EpisodeResult) -> bool {
    result.final_judgment.as_ref().is_some_and(|j| j.is_goodbye())
}

/// Joins annotations to results by episode id. Records with no matching
/// episode, or no prediction available, are skipped.
pub fn outcomes(
    results: &[EpisodeResult],
    annotations: &[AnnotationRecord],
    order: AnnotationOrder,
    facet: Facet,
    threshold: f64,
    tau: f64,
) -> Vec<BinaryOutcome> {
    let by_id: BTreeMap<&str, &EpisodeResult> = completed(results).map(|r| (r.episode_id.as_str(), r)).collect();
    annotations
        .iter()
        .filter(|a| a.order == order && a.facet == facet)
        .filter_map(|a| {
            let predicted = match a.predicted {
                Some(p) => p,
                None => {
                    let r = by_id.get(a.episode_id.as_str())?;
                    match order {
                        AnnotationOrder::First => predicted_first_order(r, facet, tau)?,
                        AnnotationOrder::Second => predicted_second_order(r),
                    }
                }
            };
            Some(BinaryOutcome {
                episode_id: a.episode_id.clone(),
                facet,
                predicted,
                gold: label_from_annotations(a, threshold),
            })
        })
        .collect()
}

/// Reads `episode_id, facet, order, score_1..score_m` with an optional
/// `predicted` column (true/false/1/0).
pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, EvalError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_annotations(&text)
}

pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>, EvalError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| EvalError::InvalidAnnotation { line: 1, message: e.to_string() })?
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    let column =
        |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| EvalError::MissingColumn(name.into()));
    let id_col = column("episode_id")?;
    let facet_col = column("facet")?;
    let order_col = column("order")?;
    let predicted_col = headers.iter().position(|h| h == "predicted");
    let score_cols: Vec<usize> =
        headers.iter().enumerate().filter(|(_, h)| h.starts_with("score")).map(|(i, _)| i).collect();
    if score_cols.is_empty() {
        return Err(EvalError::MissingColumn("score_1".into()));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let bad = |message: String| EvalError::InvalidAnnotation { line, message };
        let record = record.map_err(|e| bad(e.to_string()))?;
        let field = |c: usize| record.get(c).unwrap_or("").trim();
        let facet = field(facet_col).parse::<Facet>().map_err(bad)?;
        let order = field(order_col).parse::<AnnotationOrder>().map_err(bad)?;
        let mut scores = Vec::new();
        for &c in &score_cols {
            let raw = field(c);
            if raw.is_empty() {
                continue;
            }
            let v: f64 = raw.parse().map_err(|_| bad(format!("score `{raw}` is not a number")))?;
            if !(0.0..=MAX_ANNOTATION_SCORE).contains(&v) {
                return Err(bad(format!("score {v} outside 0..=5")));
            }
            scores.push(v);
        }
        if scores.is_empty() {
            return Err(bad("no scores".into()));
        }
        let predicted = match predicted_col.map(field).unwrap_or("") {
            "" => None,
            "true" | "1" | "yes" => Some(true),
            "false" | "0" | "no" => Some(false),
            other => return Err(bad(format!("predicted `{other}` is not a boolean"))),
        };
        out.push(AnnotationRecord { episode_id: field(id_col).to_string(), facet, order, scores, predicted });
    }
    Ok(out)
}

/// Metrics for one (scenario, variant) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub variant: String,
    pub episodes: usize,
    pub aborted: usize,
    pub average_turn: Option<f64>,
    pub success_rate: Option<f64>,
    pub first_order: BTreeMap<Facet, Prf1>,
    pub second_order: BTreeMap<Facet, Prf1>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub threshold: f64,
    pub tau: f64,
    pub abort_policy: AbortPolicy,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { threshold: DEFAULT_LABEL_THRESHOLD, tau: DEFAULT_PREDICTED_TAU, abort_policy: AbortPolicy::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub options: EvalOptions,
    pub rows: Vec<ReportRow>,
}

pub fn build_report(results: &[EpisodeResult], annotations: &[AnnotationRecord], options: EvalOptions) -> EvalReport {
    let mut groups: BTreeMap<(String, String), Vec<EpisodeResult>> = BTreeMap::new();
    for r in results {
        let key = (r.config.scenario.as_str().to_string(), r.config.variant.as_str().to_string());
        groups.entry(key).or_default().push(r.clone());
    }
    let rows = groups
        .into_iter()
        .map(|((scenario, variant), group)| {
            let per_facet = |order| {
                Facet::ALL
                    .into_iter()
                    .filter_map(|f| {
                        let o = outcomes(&group, annotations, order, f, options.threshold, options.tau);
                        (!o.is_empty()).then(|| (f, prf1(&o)))
                    })
                    .collect()
            };
            ReportRow {
                scenario,
                variant,
                episodes: group.len(),
                aborted: group.iter().filter(|r| r.is_aborted()).count(),
                average_turn: average_turn(&group).ok(),
                success_rate: success_rate(&group, options.abort_policy).ok(),
                first_order: per_facet(AnnotationOrder::First),
                second_order: per_facet(AnnotationOrder::Second),
            }
        })
        .collect();
    EvalReport { options, rows }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "undefined".into())
}

impl EvalReport {
    /// One line per group: AT, SR, then P/F/R per order and facet.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,variant,episodes,aborted,at,sr");
        for order in ["first", "second"] {
            for f in Facet::ALL {
                for m in ["p", "f", "r"] {
                    let _ = write!(out, ",{order}_{f}_{m}");
                }
            }
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{},{}",
                row.scenario,
                row.variant,
                row.episodes,
                row.aborted,
                cell(row.average_turn),
                cell(row.success_rate)
            );
            for table in [&row.first_order, &row.second_order] {
                for f in Facet::ALL {
                    let m = table.get(&f).copied().unwrap_or_default();
                    let _ = write!(out, ",{},{},{}", cell(m.precision), cell(m.f1), cell(m.recall));
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode_id: String,
    pub facet: Facet,
    pub round: usize,
    pub similarity: f64,
}

pub fn write_curves(points: &[CurvePoint], path: &Path) -> Result<(), EvalError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(path, e))?;
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    for p in points {
        writer.serialize(p).map_err(|e| io_error(path, e))?;
    }
    writer.flush().map_err(|e| io_error(path, e))
}
