//! The four prompt sections: system instructions, situational context,
//! response instructions and conversation history.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PromptError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Agent,
}

impl Speaker {
    pub fn other(self) -> Self {
        match self {
            Speaker::User => Speaker::Agent,
            Speaker::Agent => Speaker::User,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::User => "user",
            Speaker::Agent => "agent",
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Speaker {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "user" => Ok(Speaker::User),
            "agent" => Ok(Speaker::Agent),
            other => Err(format!("unknown speaker `{other}`")),
        }
    }
}

/// Position of a section in the canonical tuple (I_s, C, I_a, X).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    System,
    Context,
    Response,
    History,
}

impl Section {
    pub const CANONICAL: [Section; 4] = [
        Section::System,
        Section::Context,
        Section::Response,
        Section::History,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_marker(name: &str) -> Option<Self> {
        match name {
            "system" => Some(Section::System),
            "context" => Some(Section::Context),
            "response" => Some(Section::Response),
            "history" => Some(Section::History),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemInstructions {
    pub items: Vec<String>,
}

impl SystemInstructions {
    pub fn new(items: Vec<String>) -> Result<Self, PromptError> {
        if items.is_empty() || items.iter().any(|i| i.trim().is_empty()) {
            return Err(PromptError::InvalidSection(
                "system instructions must be a non-empty list of non-empty items".into(),
            ));
        }
        Ok(Self { items })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseInstructions {
    pub items: Vec<String>,
    pub target_language: String,
}

impl ResponseInstructions {
    /// Exactly one item must name the target language.
    pub fn new(items: Vec<String>, target_language: &str) -> Result<Self, PromptError> {
        let name = crate::text::language_name(target_language);
        let naming = items.iter().filter(|i| i.contains(name)).count();
        if naming != 1 {
            return Err(PromptError::InvalidSection(format!(
                "{naming} response instructions name the target language `{name}`, expected 1"
            )));
        }
        Ok(Self {
            items,
            target_language: target_language.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    PersonaTraits,
    HumanitySpec,
    UserMemory,
    EpisodeSummary,
    ImageDescription,
    GeneralInstructions,
    /// Few-shot demonstration dialogues (FSB prompt).
    Demonstrations,
}

impl ContextKind {
    /// Kinds of which at most one entry may exist at a time.
    fn is_singleton(self) -> bool {
        matches!(
            self,
            ContextKind::UserMemory | ContextKind::EpisodeSummary | ContextKind::ImageDescription
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub kind: ContextKind,
    pub text: String,
}

/// Situational context C^t. Every mutation bumps `revision` by one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SituationalContext {
    items: Vec<ContextEntry>,
    revision: u64,
}

impl SituationalContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn items(&self) -> &[ContextEntry] {
        &self.items
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Appends an entry; singleton kinds replace their previous entry in place.
    pub fn push(&mut self, kind: ContextKind, text: impl Into<String>) {
        let text = text.into();
        if kind.is_singleton() {
            if let Some(e) = self.items.iter_mut().find(|e| e.kind == kind) {
                e.text = text;
                self.revision += 1;
                return;
            }
        }
        self.items.push(ContextEntry { kind, text });
        self.revision += 1;
    }

    /// Installs `text` as the single entry of `kind`.
    pub fn set(&mut self, kind: ContextKind, text: impl Into<String>) {
        let text = text.into();
        let mut seen = false;
        self.items.retain(|e| {
            if e.kind != kind {
                return true;
            }
            let keep = !seen;
            seen = true;
            keep
        });
        match self.items.iter_mut().find(|e| e.kind == kind) {
            Some(e) => e.text = text,
            None => self.items.push(ContextEntry { kind, text }),
        }
        self.revision += 1;
    }

    /// Removes every entry of `kind`; a no-op (no revision bump) when absent.
    pub fn remove(&mut self, kind: ContextKind) -> bool {
        let before = self.items.len();
        self.items.retain(|e| e.kind != kind);
        let changed = self.items.len() != before;
        if changed {
            self.revision += 1;
        }
        changed
    }

    pub fn get(&self, kind: ContextKind) -> Option<&str> {
        self.items
            .iter()
            .find(|e| e.kind == kind)
            .map(|e| e.text.as_str())
    }

    pub fn all(&self, kind: ContextKind) -> impl Iterator<Item = &str> {
        self.items
            .iter()
            .filter(move |e| e.kind == kind)
            .map(|e| e.text.as_str())
    }

    pub fn count(&self, kind: ContextKind) -> usize {
        self.all(kind).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryTurn {
    pub speaker: Speaker,
    pub text: String,
}

impl HistoryTurn {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Self {
            speaker,
            text: text.into(),
        }
    }
}

/// Conversation history X^{t-1}, seen from the agent's side.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationHistory {
    turns: Vec<HistoryTurn>,
    /// Maximum number of turn pairs to render, when set.
    pub k_window: Option<usize>,
}

impl ConversationHistory {
    pub fn new(turns: Vec<HistoryTurn>) -> Result<Self, PromptError> {
        for (i, t) in turns.iter().enumerate() {
            if t.text.trim().is_empty() {
                return Err(PromptError::InvalidHistory(format!("turn {i} is empty")));
            }
            if i > 0 && turns[i - 1].speaker == t.speaker {
                return Err(PromptError::InvalidHistory(format!(
                    "turn {i} repeats speaker `{}`",
                    t.speaker
                )));
            }
        }
        Ok(Self {
            turns,
            k_window: None,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_window(mut self, k: Option<usize>) -> Self {
        self.k_window = k;
        self
    }

    pub fn turns(&self) -> &[HistoryTurn] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Turns grouped two by two from the start; the last group may hold a
    /// single turn.
    pub fn pairs(&self) -> impl Iterator<Item = &[HistoryTurn]> {
        self.turns.chunks(2)
    }

    pub fn pair_count(&self) -> usize {
        self.turns.len().div_ceil(2)
    }

    /// The turns that are rendered once `k_window` is applied.
    pub fn windowed(&self) -> &[HistoryTurn] {
        match self.k_window {
            Some(k) if k < self.pair_count() => {
                let drop = self.pair_count() - k;
                &self.turns[drop * 2..]
            }
            _ => &self.turns,
        }
    }

    /// Suffix starting at pair `from_pair`. Suffixes of a valid history are valid.
    pub fn suffix_from_pair(&self, from_pair: usize) -> Self {
        let start = (from_pair * 2).min(self.turns.len());
        Self {
            turns: self.turns[start..].to_vec(),
            k_window: self.k_window,
        }
    }
}

/// Everything a template needs besides the latest user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSections {
    pub context: SituationalContext,
    pub history: ConversationHistory,
    pub target_language: String,
}

impl PromptSections {
    pub fn new(context: SituationalContext, history: ConversationHistory, lang: &str) -> Self {
        Self {
            context,
            history,
            target_language: lang.to_string(),
        }
    }
}
