use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::PromptError;
use crate::dialogue::{BdiTriple, Decision, Facet, Judgment};
use crate::ledger::{PlanKind, PlanOp};

/// Points moved by an Increase/Decrease line that states no amount.
pub const DEFAULT_SHIFT: f64 = 10.0;

static GOODBYE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bgoodbye\b").unwrap());
static SAY_UPPER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bSAY\b").unwrap());
static SAY_ANY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bsay\b").unwrap());

/// Reads a `DECISION | reason` reply.
///
/// With a `|`, the earliest decision token before it wins (either case).
/// Without one, GOODBYE counts only when no upper-case SAY is present.
pub fn parse_judgment(raw: &str) -> Result<Judgment, PromptError> {
    let raw = raw.trim();
    let (decision, reason) = match raw.split_once('|') {
        Some((head, tail)) => {
            let goodbye = GOODBYE.find(head).map(|m| m.start());
            let say = SAY_ANY.find(head).map(|m| m.start());
            let decision = match (goodbye, say) {
                (Some(g), Some(s)) if g < s => Some(Decision::Goodbye),
                (Some(_), None) => Some(Decision::Goodbye),
                (_, Some(_)) => Some(Decision::Say),
                (None, None) => SAY_UPPER.is_match(raw).then_some(Decision::Say),
            };
            (decision, tail.trim())
        }
        None => {
            let decision = if SAY_UPPER.is_match(raw) {
                Some(Decision::Say)
            } else if GOODBYE.is_match(raw) {
                Some(Decision::Goodbye)
            } else {
                None
            };
            (decision, raw)
        }
    };
    let decision = decision.ok_or(PromptError::UnparseableJudgment)?;
    let reason = if reason.is_empty() { raw } else { reason };
    Ok(Judgment { decision, reason: reason.to_string() })
}

/// Like [`parse_judgment`], but an unreadable reply continues the
/// conversation. The flag reports the fallback.
pub fn judgment_or_say(raw: &str) -> (Judgment, bool) {
    match parse_judgment(raw) {
        Ok(j) => (j, false),
        Err(_) => {
            warn!("judgment reply has no decision token, continuing");
            (Judgment { decision: Decision::Say, reason: raw.trim().to_string() }, true)
        }
    }
}

static LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:^|[^a-z])(belief|desire|intention)s?\s*\d*\s*\**\s*(?:[:：]|\s[-–]\s)").unwrap()
});
static LIST_MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(?:[-*•]+|\d+[.):]|\(\d+\)|#+)\s*").unwrap());

fn clean_value(raw: &str) -> String {
    let s = raw.trim().trim_matches(|c: char| c == '*' || c == '"' || c == '“' || c == '”' || c.is_whitespace());
    s.trim_end_matches([';', ',']).trim().to_string()
}

/// Extracts up to `k` belief/desire/intention triples.
///
/// Labeled replies (`Belief: …`) are read label by label; a set is complete
/// once all three facets have a value. Unlabeled replies are read
/// positionally: blank-line separated blocks of three lines, or list items
/// holding exactly three sentences.
pub fn parse_bdi_sets(raw: &str, k: usize) -> Result<Vec<BdiTriple>, PromptError> {
    let mut triples = labeled_triples(raw);
    if triples.is_empty() {
        triples = positional_triples(raw);
    }
    if triples.is_empty() {
        return Err(PromptError::NoTriplesFound);
    }
    triples.truncate(k);
    Ok(triples)
}

fn labeled_triples(raw: &str) -> Vec<BdiTriple> {
    let labels: Vec<_> = LABEL
        .captures_iter(raw)
        .map(|c| {
            let facet: Facet = c[1].parse().expect("regex only matches facet names");
            (facet, c.get(0).unwrap().end())
        })
        .collect();
    let starts: Vec<usize> =
        LABEL.captures_iter(raw).map(|c| c.get(1).unwrap().start()).skip(1).chain(std::iter::once(raw.len())).collect();
    let mut triples = Vec::new();
    let mut current: [Option<String>; 3] = Default::default();
    for ((facet, value_start), value_end) in labels.into_iter().zip(starts) {
        let span = &raw[value_start..value_end];
        let value = span.lines().map(clean_value).find(|l| !l.is_empty()).unwrap_or_default();
        let slot = Facet::ALL.iter().position(|f| *f == facet).unwrap();
        if current[slot].is_some() {
            current = Default::default();
        }
        if !value.is_empty() {
            current[slot] = Some(value);
        }
        if let [Some(b), Some(d), Some(i)] = &current {
            if let Ok(t) = BdiTriple::new(b.as_str(), d.as_str(), i.as_str()) {
                triples.push(t);
            }
            current = Default::default();
        }
    }
    triples
}

fn sentences(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = line.char_indices().collect();
    for (n, &(idx, c)) in chars.iter().enumerate() {
        let at_boundary =
            matches!(c, '.' | '!' | '?') && chars.get(n + 1).is_none_or(|&(_, next)| next.is_whitespace());
        if at_boundary {
            let end = idx + c.len_utf8();
            let s = line[start..end].trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            start = end;
        }
    }
    let tail = line[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

fn positional_triples(raw: &str) -> Vec<BdiTriple> {
    let mut triples = Vec::new();
    let mut block: Vec<&str> = Vec::new();
    let mut blocks = Vec::new();
    for line in raw.lines() {
        if line.trim().is_empty() {
            if !block.is_empty() {
                blocks.push(std::mem::take(&mut block));
            }
        } else {
            block.push(line);
        }
    }
    if !block.is_empty() {
        blocks.push(block);
    }
    for block in blocks {
        let mut lines: Vec<&str> = block;
        // A "Set 1:" style header line.
        if lines.len() == 4 && lines[0].trim_end().ends_with(':') {
            lines.remove(0);
        }
        if lines.len() == 3 {
            let parts: Vec<String> = lines.iter().map(|l| clean_value(&LIST_MARKER.replace(l, ""))).collect();
            if let Ok(t) = BdiTriple::new(parts[0].as_str(), parts[1].as_str(), parts[2].as_str()) {
                triples.push(t);
            }
            continue;
        }
        for line in lines {
            if !LIST_MARKER.is_match(line) || LIST_MARKER.find(line).is_some_and(|m| m.as_str().trim().is_empty()) {
                continue;
            }
            let parts = sentences(&LIST_MARKER.replace(line, ""));
            if parts.len() == 3 {
                if let Ok(t) = BdiTriple::new(parts[0].as_str(), parts[1].as_str(), parts[2].as_str()) {
                    triples.push(t);
                }
            }
        }
    }
    triples
}

/// A reflection reply split into its titled sections.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReflectionOutput {
    pub reflection: String,
    pub plan_raw: String,
    pub plan: Vec<PlanOp>,
    pub updated_ledger_raw: String,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Reflection,
    Plan,
    Updated,
    Ignored,
}

static TITLE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^\s*(?:#+\s*)?\**\s*(?P<title>reflection|refection|plan|updated\b[^:|\n]{0,40}?|previous\b[^:|\n]{0,40}?)\s*\**\s*(?::\s*\**\s*(?P<rest>.*?)\s*|\s*)$",
    )
    .unwrap()
});

/// Splits a reflection reply on its `Reflection` (or `Refection`), `Plan`
/// and `Updated …` title lines and parses the plan into operations.
/// `k` sets the default amount for additions that state none.
pub fn parse_reflection(raw: &str, k: usize) -> Result<ReflectionOutput, PromptError> {
    let mut out = ReflectionOutput::default();
    let mut section: Option<Section> = None;
    let mut seen_title = false;
    for line in raw.lines() {
        if let Some(caps) = TITLE.captures(line) {
            let title = caps["title"].to_ascii_lowercase();
            let next = if title.starts_with("plan") {
                Section::Plan
            } else if title.starts_with("updated") {
                Section::Updated
            } else if title.starts_with("previous") {
                Section::Ignored
            } else {
                Section::Reflection
            };
            section = Some(next);
            seen_title = seen_title || next != Section::Ignored;
            if let Some(rest) = caps.name("rest").map(|m| m.as_str()).filter(|r| !r.is_empty()) {
                push_line(&mut out, next, rest);
            }
            continue;
        }
        if let Some(sec) = section {
            push_line(&mut out, sec, line);
        }
    }
    out.reflection = out.reflection.trim().to_string();
    out.plan_raw = out.plan_raw.trim().to_string();
    out.updated_ledger_raw = out.updated_ledger_raw.trim().to_string();
    if !seen_title || (out.plan_raw.is_empty() && out.updated_ledger_raw.is_empty()) {
        return Err(PromptError::NoSectionsFound);
    }
    out.plan = out.plan_raw.lines().filter_map(|l| parse_plan_line(l, k)).collect();
    Ok(out)
}

fn push_line(out: &mut ReflectionOutput, section: Section, line: &str) {
    let buf = match section {
        Section::Reflection => &mut out.reflection,
        Section::Plan => &mut out.plan_raw,
        Section::Updated => &mut out.updated_ledger_raw,
        Section::Ignored => return,
    };
    buf.push_str(line.trim_end().trim_end_matches('\\').trim_end());
    buf.push('\n');
}

static VERB: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^(?:add|adding|increase|increasing|raise|decrease|decreasing|lower|reduce|delete|deleting|remove|removing)\b",
    )
    .unwrap()
});
static BY_AMOUNT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bby\s+(\d+(?:\.\d+)?)\s*(?:%|percent|points?)?").unwrap());
static FROM_TO: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bfrom\s+(\d+(?:\.\d+)?)\s*%?\s+to\s+(\d+(?:\.\d+)?)\s*%?").unwrap());
static PERCENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\d+(?:\.\d+)?)\s*%").unwrap());
static SHIFT_TARGET: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\bconfidence(?:\s+levels?)?\s+(?:of|in|for)\s+(?:the\s+)?(?:(?:belief|desire|intention)s?\s+)?(?:that\s+)?(?P<t>.+?)(?:\s+(?:by|from|to)\s+[+-]?\d|\s+because\b|[.;]?\s*$)",
    )
    .unwrap()
});
static ADD_TARGET: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^\w+\s+(?:a\s+|an\s+|the\s+)?(?:specific\s+)?(?:new\s+)?(?:(?:belief|desire|intention)s?\s*)?(?::\s*|that\s+|reflecting\s+|about\s+)?(?P<t>.+?)(?:\s+with\s+(?:an?\s+)?(?:initial\s+)?confidence\b.*|\s+at\s+\d.*|[.;]?\s*$)",
    )
    .unwrap()
});
static DELETE_TARGET: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^\w+\s+(?:the\s+)?(?:(?:belief|desire|intention)s?\s+)?(?:that\s+)?(?P<t>.+?)(?:\s+from\s+(?:the\s+)?list.*|[.;]?\s*$)",
    )
    .unwrap()
});

fn clean_target(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c: char| c == '"' || c == '“' || c == '”' || c == '\'' || c == '*')
        .trim_end_matches(['.', ';', ','])
        .trim()
        .to_string()
}

/// Maps one plan line to an operation. Only lines that open with an
/// add/increase/decrease/delete verb produce one.
fn parse_plan_line(line: &str, k: usize) -> Option<PlanOp> {
    let body = LIST_MARKER.replace(line, "");
    let body = body.trim().trim_start_matches('*').trim();
    let verb = VERB.find(body)?.as_str().to_ascii_lowercase();
    let kind = match verb.as_str() {
        "add" | "adding" => PlanKind::Add,
        "increase" | "increasing" | "raise" => PlanKind::Increase,
        "decrease" | "decreasing" | "lower" | "reduce" => PlanKind::Decrease,
        _ => PlanKind::Delete,
    };
    let stated = FROM_TO
        .captures(body)
        .and_then(|c| Some((c[2].parse::<f64>().ok()? - c[1].parse::<f64>().ok()?).abs()))
        .or_else(|| BY_AMOUNT.captures(body).and_then(|c| c[1].parse().ok()));
    let target = match kind {
        PlanKind::Increase | PlanKind::Decrease => SHIFT_TARGET
            .captures(body)
            .map(|c| c["t"].to_string())
            .or_else(|| body.split_once(char::is_whitespace).map(|(_, rest)| rest.to_string())),
        PlanKind::Add => ADD_TARGET.captures(body).map(|c| c["t"].to_string()),
        PlanKind::Delete => DELETE_TARGET.captures(body).map(|c| c["t"].to_string()),
    };
    let target = clean_target(&target?);
    if target.is_empty() {
        return None;
    }
    let op = match kind {
        PlanKind::Add => {
            let stated = stated.or_else(|| PERCENT.captures(body).and_then(|c| c[1].parse().ok()));
            match stated {
                Some(a) => PlanOp::add(target, a),
                None => PlanOp::add(target, 100.0 / (k as f64 + 1.0)).defaulted(),
            }
        }
        PlanKind::Increase => match stated {
            Some(a) => PlanOp::increase(target, a),
            None => PlanOp::increase(target, DEFAULT_SHIFT).defaulted(),
        },
        PlanKind::Decrease => match stated {
            Some(a) => PlanOp::decrease(target, a),
            None => PlanOp::decrease(target, DEFAULT_SHIFT).defaulted(),
        },
        PlanKind::Delete => PlanOp::delete(target),
    };
    Some(op)
}
