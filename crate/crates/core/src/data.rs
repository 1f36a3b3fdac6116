//! Corpus ingestion and seeded sampling of initialization episodes.
//!
//! Rows are read from CSV through a [`ColumnMap`], grouped per episode,
//! ordered by the turn column and folded so that speakers alternate.
//! Episodes only seed agent A's BDI; their text never enters a simulated
//! dialogue beyond that.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::dialogue::{AgentId, Scenario};
use crate::rng::SeededRng;

/// Published conversation counts for the two public corpora.
pub const EMPATHETIC_DIALOGUES_TOTAL: usize = 24_850;
pub const PERSUASION_FOR_GOOD_TOTAL: usize = 1_017;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("corpus contains no usable episodes")]
    EmptyCorpus,
    #[error("asked for {needed} episodes but the corpus has {available}")]
    InsufficientCorpus { needed: usize, available: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },
}

fn io_error(path: &Path, e: impl fmt::Display) -> DataError {
    DataError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    EmpatheticDialogues,
    PersuasionForGood,
    Custom,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::EmpatheticDialogues => "empathetic_dialogues",
            Source::PersuasionForGood => "persuasion_for_good",
            Source::Custom => "custom",
        }
    }

    pub fn expected_total(self) -> Option<usize> {
        match self {
            Source::EmpatheticDialogues => Some(EMPATHETIC_DIALOGUES_TOTAL),
            Source::PersuasionForGood => Some(PERSUASION_FOR_GOOD_TOTAL),
            Source::Custom => None,
        }
    }

    /// Scenario an episode from this corpus seeds.
    pub fn scenario(self) -> Option<Scenario> {
        match self {
            Source::EmpatheticDialogues => Some(Scenario::Empathetic),
            Source::PersuasionForGood => Some(Scenario::Persuasion),
            Source::Custom => None,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "empathetic_dialogues" | "empathetic" | "ed" => Ok(Source::EmpatheticDialogues),
            "persuasion_for_good" | "persuasion" | "p4g" => Ok(Source::PersuasionForGood),
            "custom" => Ok(Source::Custom),
            other => Err(format!("unknown source `{other}`")),
        }
    }
}

/// Which CSV columns hold each field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub episode_id: String,
    pub turn_order: String,
    pub speaker: String,
    pub text: String,
    /// Extra columns copied into episode metadata from the first row.
    #[serde(default)]
    pub metadata: Vec<String>,
    /// Speaker value that plays agent A. Without one, whoever speaks first
    /// in an episode is A.
    #[serde(default)]
    pub a_role: Option<String>,
    /// Literal replacements applied to turn text, in order.
    #[serde(default)]
    pub replacements: Vec<(String, String)>,
}

impl ColumnMap {
    pub fn new(
        episode_id: impl Into<String>,
        turn_order: impl Into<String>,
        speaker: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        Self {
            episode_id: episode_id.into(),
            turn_order: turn_order.into(),
            speaker: speaker.into(),
            text: text.into(),
            metadata: Vec::new(),
            a_role: None,
            replacements: Vec::new(),
        }
    }

    /// Shipped column layout for a public corpus.
    pub fn preset(source: Source) -> Option<Self> {
        match source {
            Source::EmpatheticDialogues => Some(Self {
                metadata: vec!["context".into(), "prompt".into()],
                replacements: vec![("_comma_".into(), ",".into())],
                ..Self::new("conv_id", "utterance_idx", "speaker_idx", "utterance")
            }),
            Source::PersuasionForGood => {
                Some(Self { a_role: Some("1".into()), ..Self::new("B2", "Turn", "B4", "Unit") })
            }
            Source::Custom => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeTurn {
    /// Raw speaker value from the corpus.
    pub speaker: String,
    pub agent: AgentId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedEpisode {
    pub source: Source,
    pub episode_id: String,
    pub turns: Vec<EpisodeTurn>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl NormalizedEpisode {
    /// Builds an episode from `(agent, text)` pairs, folding repeated
    /// speakers.
    pub fn from_turns(
        source: Source,
        episode_id: impl Into<String>,
        turns: impl IntoIterator<Item = (AgentId, String)>,
    ) -> Self {
        let mut out: Vec<EpisodeTurn> = Vec::new();
        for (agent, text) in turns {
            push_turn(&mut out, agent.to_string(), agent, text);
        }
        Self { source, episode_id: episode_id.into(), turns: out, metadata: BTreeMap::new() }
    }

    pub fn is_well_formed(&self) -> bool {
        self.turns.len() >= 2 && self.turns.windows(2).all(|w| w[0].agent != w[1].agent)
    }
}

/// Appends a turn, merging it into the previous one when the same agent
/// speaks twice in a row. Returns whether a merge happened.
fn push_turn(turns: &mut Vec<EpisodeTurn>, speaker: String, agent: AgentId, text: String) -> bool {
    match turns.last_mut() {
        Some(last) if last.agent == agent => {
            last.text.push(' ');
            last.text.push_str(&text);
            true
        }
        _ => {
            turns.push(EpisodeTurn { speaker, agent, text });
            false
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub skipped_rows: usize,
    pub merged_turns: usize,
    /// Episodes dropped for having fewer than two turns.
    pub dropped_episodes: usize,
    pub episodes: usize,
    pub expected_episodes: Option<usize>,
}

impl IngestReport {
    pub fn matches_expected(&self) -> bool {
        self.expected_episodes.is_none_or(|n| n == self.episodes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum TurnKey {
    Number(i64),
    Text(String),
}

impl TurnKey {
    fn parse(raw: &str) -> Self {
        let raw = raw.trim();
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() && v.fract() == 0.0 => TurnKey::Number(v as i64),
            _ => TurnKey::Text(raw.to_string()),
        }
    }
}

struct Row {
    order: TurnKey,
    seq: usize,
    speaker: String,
    text: String,
}

/// Reads a corpus CSV into episodes ordered by first appearance.
pub fn ingest(
    path: &Path,
    source: Source,
    map: &ColumnMap,
) -> Result<(Vec<NormalizedEpisode>, IngestReport), DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let (episodes, report) = ingest_str(&text, source, map)?;
    if !report.matches_expected() {
        warn!(
            path = %path.display(),
            episodes = report.episodes,
            expected = report.expected_episodes,
            "episode count differs from the published corpus size"
        );
    }
    Ok((episodes, report))
}

pub fn ingest_str(
    text: &str,
    source: Source,
    map: &ColumnMap,
) -> Result<(Vec<NormalizedEpisode>, IngestReport), DataError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let headers =
        reader.headers().map_err(|e| DataError::Format { path: "<csv>".into(), line: 1, message: e.to_string() })?;
    let headers: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    let column =
        |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| DataError::MissingColumn(name.to_string()));
    let id_col = column(&map.episode_id)?;
    let order_col = column(&map.turn_order)?;
    let speaker_col = column(&map.speaker)?;
    let text_col = column(&map.text)?;
    let meta_cols: Vec<(String, usize)> =
        map.metadata.iter().filter_map(|m| headers.iter().position(|h| h == m).map(|i| (m.clone(), i))).collect();

    let mut report = IngestReport { expected_episodes: source.expected_total(), ..IngestReport::default() };
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, (Vec<Row>, BTreeMap<String, String>)> = BTreeMap::new();
    for (seq, record) in reader.records().enumerate() {
        report.rows += 1;
        let record = match record {
            Ok(r) if r.len() == headers.len() => r,
            Ok(r) => {
                debug!(row = seq + 2, fields = r.len(), "skipping row with wrong field count");
                report.skipped_rows += 1;
                continue;
            }
            Err(e) => {
                debug!(row = seq + 2, error = %e, "skipping unreadable row");
                report.skipped_rows += 1;
                continue;
            }
        };
        let id = record[id_col].trim();
        let mut body = record[text_col].trim().to_string();
        for (from, to) in &map.replacements {
            body = body.replace(from.as_str(), to);
        }
        let body = body.trim().to_string();
        if id.is_empty() || body.is_empty() || record[order_col].trim().is_empty() {
            report.skipped_rows += 1;
            continue;
        }
        let entry = groups.entry(id.to_string()).or_insert_with(|| {
            order.push(id.to_string());
            let meta = meta_cols.iter().map(|(name, i)| (name.clone(), record[*i].trim().to_string())).collect();
            (Vec::new(), meta)
        });
        entry.0.push(Row {
            order: TurnKey::parse(&record[order_col]),
            seq,
            speaker: record[speaker_col].trim().to_string(),
            text: body,
        });
    }

    let mut episodes = Vec::new();
    for id in order {
        let (mut rows, mut metadata) = groups.remove(&id).unwrap_or_default();
        rows.sort_by(|a, b| a.order.cmp(&b.order).then(a.seq.cmp(&b.seq)));
        let a_role = map.a_role.clone().or_else(|| rows.first().map(|r| r.speaker.clone()));
        let mut turns = Vec::new();
        for row in rows {
            let agent = if Some(&row.speaker) == a_role.as_ref() { AgentId::A } else { AgentId::B };
            if push_turn(&mut turns, row.speaker, agent, row.text) {
                report.merged_turns += 1;
            }
        }
        if turns.len() < 2 {
            report.dropped_episodes += 1;
            continue;
        }
        metadata.retain(|_, v| !v.is_empty());
        episodes.push(NormalizedEpisode { source, episode_id: id, turns, metadata });
    }
    report.episodes = episodes.len();
    if episodes.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    Ok((episodes, report))
}

/// `n` distinct episodes drawn uniformly without replacement.
pub fn sample_episodes(
    corpus: &[NormalizedEpisode],
    n: usize,
    rng_seed: u64,
) -> Result<Vec<NormalizedEpisode>, DataError> {
    if n > corpus.len() {
        return Err(DataError::InsufficientCorpus { needed: n, available: corpus.len() });
    }
    let picks = SeededRng::new(rng_seed).sample_indices(corpus.len(), n);
    Ok(picks.into_iter().map(|i| corpus[i].clone()).collect())
}

pub fn write_episodes(episodes: &[NormalizedEpisode], path: &Path) -> Result<(), DataError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(path, e))?;
    }
    let file = fs::File::create(path).map_err(|e| io_error(path, e))?;
    let mut out = BufWriter::new(file);
    for ep in episodes {
        let line = serde_json::to_string(ep).map_err(|e| io_error(path, e))?;
        writeln!(out, "{line}").map_err(|e| io_error(path, e))?;
    }
    out.flush().map_err(|e| io_error(path, e))
}

pub fn read_episodes(path: &Path) -> Result<Vec<NormalizedEpisode>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ep = serde_json::from_str(line).map_err(|e| DataError::Format {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(ep);
    }
    Ok(out)
}

/// Transcript of an episode with the scenario's display names, one
/// `Name: text` line per turn.
pub fn render_seed(episode: &NormalizedEpisode, scenario: Scenario) -> String {
    episode
        .turns
        .iter()
        .map(|t| format!("{}: {}", scenario.display_name(t.agent), t.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Small built-in episode used when no corpus is supplied.
pub fn builtin_seed(scenario: Scenario) -> NormalizedEpisode {
    let (source, lines): (Source, [&str; 4]) = match scenario {
        Scenario::Empathetic => (
            Source::EmpatheticDialogues,
            [
                "My grandmother's old piano finally got sold last weekend and the house feels quiet.",
                "That sounds like a big change. Did you play it much?",
                "Every holiday. She taught me my first song on it, so letting it go was harder than I expected.",
                "It makes sense that it hurts. Those memories are still yours even without the piano.",
            ],
        ),
        Scenario::Persuasion => (
            Source::PersuasionForGood,
            [
                "Hi, have you heard of the charity Save the Children?",
                "I have, but I usually don't donate online. I'm never sure where the money goes.",
                "They publish yearly reports on how funds are spent, mostly on health and education for kids.",
                "That helps a little. I'd still want to think about how much I can afford.",
            ],
        ),
    };
    let agents = match scenario {
        Scenario::Empathetic => [AgentId::A, AgentId::B, AgentId::A, AgentId::B],
        Scenario::Persuasion => [AgentId::B, AgentId::A, AgentId::B, AgentId::A],
    };
    NormalizedEpisode::from_turns(
        source,
        format!("builtin-{}", scenario.as_str()),
        agents.into_iter().zip(lines.iter().map(|l| l.to_string())),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn turn_keys_order_numerically() {
        assert!(TurnKey::parse("2") < TurnKey::parse("10"));
        assert_eq!(TurnKey::parse("3.0"), TurnKey::Number(3));
    }

    #[test]
    fn builtin_seeds_are_well_formed() {
        for s in [Scenario::Empathetic, Scenario::Persuasion] {
            assert!(builtin_seed(s).is_well_formed());
        }
        assert!(render_seed(&builtin_seed(Scenario::Persuasion), Scenario::Persuasion).starts_with("Persuader: "));
    }
}
