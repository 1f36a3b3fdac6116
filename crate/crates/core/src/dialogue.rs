//! Shared dialogue vocabulary: BDI triples, facets, utterances, the
//! alternating two-party history and second-order judgments.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DialogueError {
    #[error("speaker {got} cannot speak now, expected {expected}")]
    AlternationViolation { expected: AgentId, got: AgentId },
    #[error("utterance text is blank")]
    EmptyUtterance,
    #[error("no display name for speaker {0}")]
    UnknownSpeaker(AgentId),
    #[error("BDI triple has an empty {0} field")]
    EmptyBdiField(Facet),
}

/// Stable internal identity of the two conversants. `A` is the self-aware
/// agent and always opens the conversation; `B` is the tracker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentId {
    A,
    B,
}

impl AgentId {
    pub fn other(self) -> Self {
        match self {
            AgentId::A => AgentId::B,
            AgentId::B => AgentId::A,
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentId::A => "A",
            AgentId::B => "B",
        })
    }
}

/// One of the three mental-state facets tracked for agent A.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facet {
    Belief,
    Desire,
    Intention,
}

impl Facet {
    /// Update order within a round.
    pub const ALL: [Facet; 3] = [Facet::Belief, Facet::Desire, Facet::Intention];

    pub fn as_str(self) -> &'static str {
        match self {
            Facet::Belief => "belief",
            Facet::Desire => "desire",
            Facet::Intention => "intention",
        }
    }
}

impl fmt::Display for Facet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Facet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "belief" | "beliefs" | "b" => Ok(Facet::Belief),
            "desire" | "desires" | "d" => Ok(Facet::Desire),
            "intention" | "intentions" | "i" => Ok(Facet::Intention),
            other => Err(format!("unknown facet `{other}`")),
        }
    }
}

/// A (belief, desire, intention) sentence triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTriple")]
pub struct BdiTriple {
    belief: String,
    desire: String,
    intention: String,
}

#[derive(Deserialize)]
struct RawTriple {
    belief: String,
    desire: String,
    intention: String,
}

impl TryFrom<RawTriple> for BdiTriple {
    type Error = DialogueError;

    fn try_from(raw: RawTriple) -> Result<Self, Self::Error> {
        BdiTriple::new(raw.belief, raw.desire, raw.intention)
    }
}

impl BdiTriple {
    pub fn new(
        belief: impl Into<String>,
        desire: impl Into<String>,
        intention: impl Into<String>,
    ) -> Result<Self, DialogueError> {
        let triple = Self {
            belief: belief.into().trim().to_string(),
            desire: desire.into().trim().to_string(),
            intention: intention.into().trim().to_string(),
        };
        for facet in Facet::ALL {
            if triple.get(facet).is_empty() {
                return Err(DialogueError::EmptyBdiField(facet));
            }
        }
        Ok(triple)
    }

    pub fn get(&self, facet: Facet) -> &str {
        match facet {
            Facet::Belief => &self.belief,
            Facet::Desire => &self.desire,
            Facet::Intention => &self.intention,
        }
    }

    pub fn belief(&self) -> &str {
        &self.belief
    }

    pub fn desire(&self) -> &str {
        &self.desire
    }

    pub fn intention(&self) -> &str {
        &self.intention
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: AgentId,
    pub text: String,
    pub turn_index: usize,
}

/// Ordered, strictly alternating A/B history. Appending returns a new value;
/// an existing history is never edited.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueHistory {
    turns: Vec<Utterance>,
}

impl DialogueHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn turns(&self) -> &[Utterance] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn next_speaker(&self) -> AgentId {
        self.turns.last().map_or(AgentId::A, |u| u.speaker.other())
    }

    /// A round is an adjacent (A, B) pair; a trailing A-utterance opens a new one.
    pub fn round_count(&self) -> usize {
        self.turns.len().div_ceil(2)
    }

    pub fn count_by(&self, speaker: AgentId) -> usize {
        self.turns.iter().filter(|u| u.speaker == speaker).count()
    }

    pub fn last(&self) -> Option<&Utterance> {
        self.turns.last()
    }

    /// The first `n` turns (all of them when `n` exceeds the length).
    pub fn prefix(&self, n: usize) -> Self {
        Self { turns: self.turns[..n.min(self.turns.len())].to_vec() }
    }

    pub fn append_turn(&self, speaker: AgentId, text: &str) -> Result<Self, DialogueError> {
        let expected = self.next_speaker();
        if speaker != expected {
            return Err(DialogueError::AlternationViolation { expected, got: speaker });
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(DialogueError::EmptyUtterance);
        }
        let mut turns = self.turns.clone();
        turns.push(Utterance { speaker, text: text.to_string(), turn_index: self.turns.len() });
        Ok(Self { turns })
    }

    /// One `<DisplayName>: <text>` line per turn, oldest first.
    pub fn render(&self, names: &NameMap) -> Result<String, DialogueError> {
        let lines = self
            .turns
            .iter()
            .map(|u| names.get(u.speaker).map(|name| format!("{name}: {}", u.text)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(lines.join("\n"))
    }
}

/// Agent id → display name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameMap(BTreeMap<AgentId, String>);

impl NameMap {
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Self {
        let mut map = BTreeMap::new();
        map.insert(AgentId::A, a.into());
        map.insert(AgentId::B, b.into());
        Self(map)
    }

    pub fn with_only(id: AgentId, name: impl Into<String>) -> Self {
        let mut map = BTreeMap::new();
        map.insert(id, name.into());
        Self(map)
    }

    pub fn get(&self, id: AgentId) -> Result<&str, DialogueError> {
        self.0.get(&id).map(String::as_str).ok_or(DialogueError::UnknownSpeaker(id))
    }
}

/// The two conversation settings. A is the sympathy-needing speaker or the
/// persuadee; B is the empathetic listener or the persuader.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Empathetic,
    Persuasion,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Empathetic => "empathetic",
            Scenario::Persuasion => "persuasion",
        }
    }

    pub fn display_name(self, id: AgentId) -> &'static str {
        match (self, id) {
            (Scenario::Empathetic, AgentId::A) => "Sympathy-needing Agent",
            (Scenario::Empathetic, AgentId::B) => "Empathetic Agent",
            (Scenario::Persuasion, AgentId::A) => "Persuadee",
            (Scenario::Persuasion, AgentId::B) => "Persuader",
        }
    }

    pub fn names(self) -> NameMap {
        NameMap::new(self.display_name(AgentId::A), self.display_name(AgentId::B))
    }

    /// What A keeps seeking while it continues the conversation.
    pub fn seek_goal(self) -> &'static str {
        match self {
            Scenario::Empathetic => "the understanding or empathy",
            Scenario::Persuasion => "the understanding or respect",
        }
    }

    /// The kind of reply B produces from its inferred view of A.
    pub fn response_goal(self) -> String {
        let a = self.display_name(AgentId::A);
        match self {
            Scenario::Empathetic => {
                format!("an empathetic response to {a}, especially considering {a}'s semantic emotions")
            }
            Scenario::Persuasion => format!("a persuasive response to {a}, to persuade {a} to donate more money"),
        }
    }

    /// B's own standing belief, desire and intention.
    pub fn tracker_persona(self) -> BdiTriple {
        let a = self.display_name(AgentId::A);
        let (b, d, i) = match self {
            Scenario::Empathetic => (
                format!("{a} is going through something that matters to them."),
                format!("I want {a} to feel heard and understood."),
                format!("I will respond to {a} with empathy and care."),
            ),
            Scenario::Persuasion => (
                "Donations to children's charities make a real difference.".to_string(),
                format!("I want {a} to donate more money."),
                format!("I will address {a}'s concerns and encourage a donation."),
            ),
        };
        BdiTriple::new(b, d, i).expect("persona fields are non-empty")
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "empathetic" | "empathy" => Ok(Scenario::Empathetic),
            "persuasion" | "persuasive" => Ok(Scenario::Persuasion),
            other => Err(format!("unknown scenario `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Say,
    Goodbye,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Say => "SAY",
            Decision::Goodbye => "GOODBYE",
        })
    }
}

/// Agent A's second-order verdict on whether B has understood it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub decision: Decision,
    pub reason: String,
}

impl Judgment {
    /// Stand-in used before the first real judgment exists.
    pub fn bootstrap() -> Self {
        Self { decision: Decision::Say, reason: "conversation just started".to_string() }
    }

    pub fn is_goodbye(&self) -> bool {
        self.decision == Decision::Goodbye
    }
}
