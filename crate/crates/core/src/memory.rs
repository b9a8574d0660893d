//! Episode summaries of truncated turns and the one-line user memory.
//!
//! Both are auxiliary completions whose output lands in the situational
//! context; neither touches the conversation history.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::{
    complete_with_retry, Backend, DecodingParams, GatewayError, GenerationRequest,
};
use crate::prompt::{ContextKind, HistoryTurn, PromptError, SituationalContext, Speaker, Template};

pub const SUMMARY_TEMPLATE: &str = include_str!("../assets/aux/summary.txt");
pub const USER_MEMORY_TEMPLATE: &str = include_str!("../assets/aux/user_memory.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub text: String,
    /// Inclusive turn indices covered.
    pub covers_turn_range: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserMemory {
    /// Never contains a line break.
    pub text: String,
    pub last_updated_turn: usize,
}

/// Per-agent memory carried across turns.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryState {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<EpisodeSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_memory: Option<UserMemory>,
    /// Set when an auxiliary call failed and a prior value was kept.
    #[serde(default)]
    pub degraded: bool,
    /// User turns seen at the last memory update.
    #[serde(default)]
    pub user_turns_at_update: usize,
    #[serde(default)]
    pub updates: usize,
}

impl MemoryState {
    /// Writes the current entries into `ctx`.
    pub fn install(&self, ctx: &mut SituationalContext) {
        match &self.summary {
            Some(s) if !s.text.is_empty() => ctx.set(ContextKind::EpisodeSummary, s.text.clone()),
            _ => {
                ctx.remove(ContextKind::EpisodeSummary);
            }
        }
        match &self.user_memory {
            Some(m) if !m.text.is_empty() => ctx.set(ContextKind::UserMemory, m.text.clone()),
            _ => {
                ctx.remove(ContextKind::UserMemory);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryToggles {
    pub enabled: bool,
    /// User turns between two user-memory refreshes.
    pub cadence: usize,
}

impl Default for MemoryToggles {
    fn default() -> Self {
        Self {
            enabled: true,
            cadence: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummaryToggles {
    pub max_sentences: usize,
}

impl Default for SummaryToggles {
    fn default() -> Self {
        Self { max_sentences: 3 }
    }
}

/// `[memory]` and `[summary]` configuration tables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorySettings {
    #[serde(default)]
    pub memory: MemoryToggles,
    #[serde(default)]
    pub summary: SummaryToggles,
}

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("nothing to summarize")]
    NothingRemoved,
    #[error("no user turn since the last memory update")]
    NoNewUserTurn,
    #[error("auxiliary template: {0}")]
    Template(#[from] PromptError),
    #[error("auxiliary call failed: {0}")]
    Backend(#[from] GatewayError),
    #[error("auxiliary call returned an empty text")]
    EmptyOutput,
}

#[derive(Debug, Clone)]
pub struct AuxTemplates {
    pub summary: Template,
    pub user_memory: Template,
}

impl AuxTemplates {
    pub fn builtin() -> Self {
        Self {
            summary: Template::parse("summary", SUMMARY_TEMPLATE)
                .expect("builtin summary template"),
            user_memory: Template::parse("user_memory", USER_MEMORY_TEMPLATE)
                .expect("builtin user memory template"),
        }
    }

    /// Built-ins replaced by `summary.txt` / `user_memory.txt` found in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut t = Self::builtin();
        for (name, slot) in [
            ("summary", &mut t.summary),
            ("user_memory", &mut t.user_memory),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.is_file() {
                let src = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                *slot = Template::parse(name, &src)?;
            }
        }
        Ok(t)
    }
}

impl Default for AuxTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Transcript of `turns` for auxiliary prompts.
pub fn render_excerpt(turns: &[HistoryTurn]) -> String {
    let mut out = String::new();
    for t in turns {
        out.push_str(match t.speaker {
            Speaker::User => "User: ",
            Speaker::Agent => "Agent: ",
        });
        out.push_str(&t.text);
        out.push('\n');
    }
    out
}

/// Joins the non-blank lines of `text` with "; ".
pub fn collapse_lines(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Issues auxiliary calls against one backend.
#[derive(Debug)]
pub struct MemoryModules<'a> {
    pub backend: &'a dyn Backend,
    pub backend_id: &'a str,
    pub templates: &'a AuxTemplates,
    pub settings: MemorySettings,
    pub decoding: DecodingParams,
    pub max_retries: usize,
}

impl MemoryModules<'_> {
    fn call(&self, prompt: String) -> Result<String, MemoryError> {
        let req = GenerationRequest::new(
            prompt,
            &self.decoding,
            vec!["</s>".to_string()],
            self.backend_id,
        );
        let out = complete_with_retry(self.backend, &req, self.max_retries)?;
        Ok(out.completion.text)
    }

    /// Summarizes `removed`, whose first turn has index `first_index`; the
    /// prior summary is fed to the prompt and its range extended.
    pub fn summarize_removed(
        &self,
        removed: &[HistoryTurn],
        first_index: usize,
        prior: Option<&EpisodeSummary>,
    ) -> Result<EpisodeSummary, MemoryError> {
        if removed.is_empty() {
            return Err(MemoryError::NothingRemoved);
        }
        let mut v = BTreeMap::new();
        v.insert(
            "max_sentences".to_string(),
            self.settings.summary.max_sentences.to_string(),
        );
        v.insert("excerpt".to_string(), render_excerpt(removed));
        if let Some(p) = prior {
            v.insert("prior_summary".to_string(), p.text.clone());
        }
        let prompt = self.templates.summary.render(&v)?.text;
        let text = collapse_lines(&self.call(prompt)?);
        if text.is_empty() {
            return Err(MemoryError::EmptyOutput);
        }
        let from = prior.map_or(first_index, |p| p.covers_turn_range.0);
        Ok(EpisodeSummary {
            text,
            covers_turn_range: (from, first_index + removed.len() - 1),
        })
    }

    /// One-line memory from `turns`; `last_turn` is the index of the latest one.
    pub fn update_user_memory(
        &self,
        turns: &[HistoryTurn],
        last_turn: usize,
        prior: Option<&UserMemory>,
    ) -> Result<UserMemory, MemoryError> {
        if !turns.iter().any(|t| t.speaker == Speaker::User) {
            return Err(MemoryError::NoNewUserTurn);
        }
        let mut v = BTreeMap::new();
        v.insert("excerpt".to_string(), render_excerpt(turns));
        if let Some(p) = prior {
            v.insert("prior_memory".to_string(), p.text.clone());
        }
        let prompt = self.templates.user_memory.render(&v)?.text;
        let text = collapse_lines(&self.call(prompt)?);
        if text.is_empty() {
            return Err(MemoryError::EmptyOutput);
        }
        Ok(UserMemory {
            text,
            last_updated_turn: last_turn,
        })
    }

    /// Summarizes the turns in `removed` not yet covered and installs the
    /// result. On failure the prior summary stays and `degraded` is set.
    pub fn refresh_summary(
        &self,
        state: &mut MemoryState,
        ctx: &mut SituationalContext,
        turns: &[HistoryTurn],
        removed_count: usize,
    ) -> Option<MemoryError> {
        let covered = state
            .summary
            .as_ref()
            .map_or(0, |s| s.covers_turn_range.1 + 1);
        if removed_count <= covered {
            state.install(ctx);
            return None;
        }
        let err = match self.summarize_removed(
            &turns[covered..removed_count],
            covered,
            state.summary.as_ref(),
        ) {
            Ok(s) => {
                state.summary = Some(s);
                None
            }
            Err(e) => {
                state.degraded = true;
                Some(e)
            }
        };
        state.install(ctx);
        err
    }

    /// Refreshes the user memory when `cadence` user turns have passed since
    /// the last update, from the turns after the previous update. Returns
    /// whether an update was attempted.
    pub fn maybe_update_user_memory(
        &self,
        state: &mut MemoryState,
        ctx: &mut SituationalContext,
        turns: &[HistoryTurn],
    ) -> (bool, Option<MemoryError>) {
        let user_turns = turns.iter().filter(|t| t.speaker == Speaker::User).count();
        let cadence = self.settings.memory.cadence.max(1);
        if !self.settings.memory.enabled || user_turns < state.user_turns_at_update + cadence {
            return (false, None);
        }
        state.user_turns_at_update = user_turns;
        state.updates += 1;
        let start = state
            .user_memory
            .as_ref()
            .map_or(0, |m| (m.last_updated_turn + 1).min(turns.len()));
        let err = match self.update_user_memory(
            &turns[start..],
            turns.len().saturating_sub(1),
            state.user_memory.as_ref(),
        ) {
            Ok(m) => {
                state.user_memory = Some(m);
                None
            }
            Err(e) => {
                state.degraded = true;
                Some(e)
            }
        };
        state.install(ctx);
        (true, err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockScript, ScriptEntry};

    fn turns(n: usize) -> Vec<HistoryTurn> {
        (0..n)
            .map(|i| {
                let s = if i % 2 == 0 {
                    Speaker::User
                } else {
                    Speaker::Agent
                };
                HistoryTurn::new(s, format!("message {i}"))
            })
            .collect()
    }

    fn modules<'a>(backend: &'a MockBackend, t: &'a AuxTemplates) -> MemoryModules<'a> {
        MemoryModules {
            backend,
            backend_id: "mock",
            templates: t,
            settings: MemorySettings::default(),
            decoding: DecodingParams::default(),
            max_retries: 0,
        }
    }

    #[test]
    fn scripted_summary_and_range() {
        let b = MockBackend::new("mock", MockScript::ordered(["User owns a dog named Nino."]));
        let t = AuxTemplates::builtin();
        let s = modules(&b, &t)
            .summarize_removed(&turns(8), 0, None)
            .unwrap();
        assert_eq!(s.text, "User owns a dog named Nino.");
        assert_eq!(s.covers_turn_range, (0, 7));
        assert!(b.prompts()[0].contains("User: message 0\nAgent: message 1\n"));
        assert!(!b.prompts()[0].contains("earlier part"));
    }

    #[test]
    fn second_summary_merges_and_replaces() {
        let b = MockBackend::new("mock", MockScript::ordered(["First.", "Merged."]));
        let t = AuxTemplates::builtin();
        let m = modules(&b, &t);
        let all = turns(12);
        let mut state = MemoryState::default();
        let mut ctx = SituationalContext::new();
        assert!(m.refresh_summary(&mut state, &mut ctx, &all, 4).is_none());
        assert!(m.refresh_summary(&mut state, &mut ctx, &all, 4).is_none());
        assert_eq!(b.calls(), 1);
        assert!(m.refresh_summary(&mut state, &mut ctx, &all, 8).is_none());
        assert!(b.prompts()[1].contains("Summary of the earlier part of the conversation: First."));
        assert!(b.prompts()[1].contains("User: message 4\n"));
        assert!(!b.prompts()[1].contains("message 3\n"));
        assert_eq!(state.summary.as_ref().unwrap().covers_turn_range, (0, 7));
        assert_eq!(ctx.count(ContextKind::EpisodeSummary), 1);
        assert_eq!(ctx.get(ContextKind::EpisodeSummary), Some("Merged."));
    }

    #[test]
    fn failed_summary_keeps_prior() {
        let b = MockBackend::new(
            "mock",
            MockScript::Ordered(vec![
                ScriptEntry::Text("First.".into()),
                ScriptEntry::Fail {
                    retryable: true,
                    message: "down".into(),
                },
            ]),
        );
        let t = AuxTemplates::builtin();
        let m = modules(&b, &t);
        let all = turns(8);
        let mut state = MemoryState::default();
        let mut ctx = SituationalContext::new();
        m.refresh_summary(&mut state, &mut ctx, &all, 2);
        assert!(m.refresh_summary(&mut state, &mut ctx, &all, 6).is_some());
        assert!(state.degraded);
        assert_eq!(ctx.get(ContextKind::EpisodeSummary), Some("First."));
        assert_eq!(state.summary.unwrap().covers_turn_range, (0, 1));
    }

    #[test]
    fn memory_verbatim_and_collapsed() {
        let b = MockBackend::new(
            "mock",
            MockScript::ordered([
                "User is a computer specialist with a Yorkie.",
                "User is called Jean.\nUser likes jazz.\n\n",
            ]),
        );
        let t = AuxTemplates::builtin();
        let m = modules(&b, &t);
        let a = m.update_user_memory(&turns(2), 1, None).unwrap();
        assert_eq!(a.text, "User is a computer specialist with a Yorkie.");
        let c = m.update_user_memory(&turns(2), 1, Some(&a)).unwrap();
        assert_eq!(c.text, "User is called Jean.; User likes jazz.");
        assert!(b.prompts()[1].contains("Previously known about the user: User is a computer"));
    }

    #[test]
    fn cadence_four_with_six_user_turns() {
        let b = MockBackend::new("mock", MockScript::ordered(["Likes tea."])).cycling(true);
        let t = AuxTemplates::builtin();
        let m = modules(&b, &t);
        let all = turns(12);
        let mut state = MemoryState::default();
        let mut ctx = SituationalContext::new();
        let mut updated_after = Vec::new();
        for end in 1..=all.len() {
            if all[end - 1].speaker != Speaker::User {
                continue;
            }
            let (did, err) = m.maybe_update_user_memory(&mut state, &mut ctx, &all[..end]);
            assert!(err.is_none());
            if did {
                updated_after.push(end.div_ceil(2));
            }
        }
        assert_eq!(updated_after, [4]);
        assert_eq!(state.updates, 1);
        assert_eq!(ctx.get(ContextKind::UserMemory), Some("Likes tea."));
    }

    #[test]
    fn disabled_memory_never_updates() {
        let b = MockBackend::new("mock", MockScript::ordered(["x"])).cycling(true);
        let t = AuxTemplates::builtin();
        let mut m = modules(&b, &t);
        m.settings.memory.enabled = false;
        let mut state = MemoryState::default();
        let mut ctx = SituationalContext::new();
        assert!(
            !m.maybe_update_user_memory(&mut state, &mut ctx, &turns(20))
                .0
        );
        assert_eq!(b.calls(), 0);
    }

    #[test]
    fn settings_from_toml() {
        let s: MemorySettings = toml::from_str(
            "[memory]\ncadence = 6\nenabled = false\n[summary]\nmax_sentences = 2\n",
        )
        .unwrap();
        assert_eq!(s.memory.cadence, 6);
        assert!(!s.memory.enabled);
        assert_eq!(s.summary.max_sentences, 2);
        assert_eq!(
            toml::from_str::<MemorySettings>("").unwrap(),
            MemorySettings::default()
        );
    }
}
