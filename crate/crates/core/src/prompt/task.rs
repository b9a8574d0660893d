//! Built-in dialogue tasks: template, section order, labels and stop markers.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::template::Template;
use super::tokens::{TokenEstimator, WordHeuristic};
use super::{ContextKind, PromptError, PromptSections, Section, SigmaPermutation, Speaker};
use crate::Registry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    VicunaBasis,
    Fsb,
    PersonaShallow,
    PersonaAdvanced,
    Int,
}

impl TaskId {
    pub const ALL: [TaskId; 5] = [
        TaskId::VicunaBasis,
        TaskId::Fsb,
        TaskId::PersonaShallow,
        TaskId::PersonaAdvanced,
        TaskId::Int,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::VicunaBasis => "vicuna_basis",
            TaskId::Fsb => "fsb",
            TaskId::PersonaShallow => "persona_shallow",
            TaskId::PersonaAdvanced => "persona_advanced",
            TaskId::Int => "int",
        }
    }

    /// Tasks whose agent plays a PersonaChat persona.
    pub fn is_persona_family(self) -> bool {
        matches!(
            self,
            TaskId::Fsb | TaskId::PersonaShallow | TaskId::PersonaAdvanced
        )
    }

    /// Name of the response filter strategy used for this task.
    pub fn filter_name(self) -> &'static str {
        match self {
            TaskId::Int => "int",
            _ => "persona",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| PromptError::UnknownTask(s.to_string()))
    }
}

/// Where the latest user message goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UserMessagePlacement {
    /// Closes the history section.
    EndOfHistory,
    /// Injected into the instruction tail after the history.
    InstructionTail,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerLabels {
    pub user: String,
    pub agent: String,
    /// Appended to every agent message in the history.
    pub end_of_message: String,
}

impl SpeakerLabels {
    pub fn label(&self, speaker: Speaker) -> &str {
        match speaker {
            Speaker::User => &self.user,
            Speaker::Agent => &self.agent,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskProfile {
    pub id: TaskId,
    pub template: Template,
    pub sigma: SigmaPermutation,
    pub labels: SpeakerLabels,
    pub placement: UserMessagePlacement,
    /// Separator between persona traits in the `{persona}` slot.
    pub persona_separator: &'static str,
    pub stop_markers: Vec<String>,
}

impl TaskProfile {
    fn builtin(id: TaskId, source: &str) -> Result<Self, PromptError> {
        let template = Template::parse(id.as_str(), source)?;
        let vicuna = SpeakerLabels {
            user: "USER: ".into(),
            agent: "ASSISTANT: ".into(),
            end_of_message: "</s>".into(),
        };
        let (sigma, labels, placement, sep, stops) = match id {
            TaskId::Int => (
                SigmaPermutation::HISTORY_FIRST,
                vicuna,
                UserMessagePlacement::InstructionTail,
                " ",
                vec!["</s>".to_string(), "\nUSER:".to_string()],
            ),
            TaskId::Fsb => (
                SigmaPermutation::IDENTITY,
                SpeakerLabels {
                    user: "User: ".into(),
                    agent: "Persona: ".into(),
                    end_of_message: String::new(),
                },
                UserMessagePlacement::EndOfHistory,
                "\n",
                vec!["\nUser:".to_string(), "</s>".to_string()],
            ),
            _ => (
                SigmaPermutation::IDENTITY,
                vicuna,
                UserMessagePlacement::EndOfHistory,
                " ",
                vec!["</s>".to_string(), "\nUSER:".to_string()],
            ),
        };
        let profile = Self {
            id,
            template,
            sigma,
            labels,
            placement,
            persona_separator: sep,
            stop_markers: stops,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// Checks the template's section markers against `sigma` and the slots
    /// the task relies on.
    pub fn validate(&self) -> Result<(), PromptError> {
        let expected = self.sigma.sections();
        if self.template.section_order() != expected {
            return Err(PromptError::SectionOrder {
                task: self.id.to_string(),
                expected: expected.to_vec(),
                found: self.template.section_order().to_vec(),
            });
        }
        for slot in ["history", "user_message"] {
            if !self.template.references(slot) {
                return Err(PromptError::TemplateSyntax {
                    template: self.id.to_string(),
                    message: format!("missing `{{{slot}}}` slot"),
                });
            }
        }
        if self.id.is_persona_family() && !self.template.references("persona") {
            return Err(PromptError::TemplateSyntax {
                template: self.id.to_string(),
                message: "missing `{persona}` slot".into(),
            });
        }
        if self.id == TaskId::Int && !self.template.references("image_description") {
            return Err(PromptError::TemplateSyntax {
                template: self.id.to_string(),
                message: "missing `{image_description}` slot".into(),
            });
        }
        Ok(())
    }

    pub fn render_history(&self, turns: &[super::HistoryTurn]) -> String {
        let mut out = String::new();
        for t in turns {
            out.push_str(self.labels.label(t.speaker));
            out.push_str(&t.text);
            if t.speaker == Speaker::Agent {
                out.push_str(&self.labels.end_of_message);
            }
            out.push('\n');
        }
        out
    }

    fn slot_values(&self, sections: &PromptSections, latest: &str) -> BTreeMap<String, String> {
        let ctx = &sections.context;
        let mut v = BTreeMap::new();
        let mut put_joined = |name: &str, kind: ContextKind, sep: &str| {
            let items: Vec<&str> = ctx.all(kind).collect();
            if !items.is_empty() {
                v.insert(name.to_string(), items.join(sep));
            }
        };
        put_joined(
            "persona",
            ContextKind::PersonaTraits,
            self.persona_separator,
        );
        put_joined("demonstrations", ContextKind::Demonstrations, "");
        put_joined("humanity_spec", ContextKind::HumanitySpec, " ");
        put_joined(
            "general_instructions",
            ContextKind::GeneralInstructions,
            " ",
        );
        put_joined("user_memory", ContextKind::UserMemory, " ");
        put_joined("summary", ContextKind::EpisodeSummary, " ");
        put_joined("image_description", ContextKind::ImageDescription, " ");
        v.insert(
            "history".into(),
            self.render_history(sections.history.windowed()),
        );
        v.insert("user_message".into(), latest.to_string());
        v.insert(
            "language".into(),
            crate::text::language_name(&sections.target_language).to_string(),
        );
        v
    }

    pub fn render(
        &self,
        sections: &PromptSections,
        latest_user_message: &str,
        estimator: &dyn TokenEstimator,
    ) -> Result<RenderedPrompt, PromptError> {
        let rendered = self
            .template
            .render(&self.slot_values(sections, latest_user_message))?;
        let token_estimate = estimator.estimate(&rendered.text);
        Ok(RenderedPrompt {
            task: self.id,
            text: rendered.text,
            token_estimate,
            section_spans: rendered.spans,
        })
    }
}

/// P^t: the full prompt text plus where each section landed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub task: TaskId,
    pub text: String,
    pub token_estimate: usize,
    /// Byte ranges in output order.
    pub section_spans: Vec<(Section, Range<usize>)>,
}

impl RenderedPrompt {
    pub fn span(&self, section: Section) -> Range<usize> {
        self.section_spans
            .iter()
            .find(|(s, _)| *s == section)
            .map(|(_, r)| r.clone())
            .unwrap_or(0..0)
    }

    pub fn section_text(&self, section: Section) -> &str {
        &self.text[self.span(section)]
    }

    /// Section order as laid out in the text.
    pub fn order(&self) -> Vec<Section> {
        self.section_spans.iter().map(|(s, _)| *s).collect()
    }
}

pub const BUILTIN_TEMPLATES: [(TaskId, &str); 5] = [
    (
        TaskId::VicunaBasis,
        include_str!("../../assets/templates/vicuna_basis.txt"),
    ),
    (TaskId::Fsb, include_str!("../../assets/templates/fsb.txt")),
    (
        TaskId::PersonaShallow,
        include_str!("../../assets/templates/persona_shallow.txt"),
    ),
    (
        TaskId::PersonaAdvanced,
        include_str!("../../assets/templates/persona_advanced.txt"),
    ),
    (TaskId::Int, include_str!("../../assets/templates/int.txt")),
];

/// Task profiles keyed by task id.
#[derive(Debug, Clone)]
pub struct TaskCatalog {
    profiles: Registry<TaskProfile>,
    estimator: Arc<dyn TokenEstimator>,
}

impl TaskCatalog {
    pub fn builtin() -> Self {
        let mut profiles = Registry::new("task");
        for (id, src) in BUILTIN_TEMPLATES {
            let p = TaskProfile::builtin(id, src).expect("built-in templates are valid");
            profiles.register(id.as_str(), Arc::new(p));
        }
        Self {
            profiles,
            estimator: Arc::new(WordHeuristic::default()),
        }
    }

    /// Built-ins, with any `<task_id>.txt` found in `dir` replacing the
    /// shipped template.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut cat = Self::builtin();
        for id in TaskId::ALL {
            let path = dir.join(format!("{}.txt", id.as_str()));
            if path.exists() {
                let src = std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                let p = TaskProfile::builtin(id, &src)?;
                cat.profiles.register(id.as_str(), Arc::new(p));
            }
        }
        Ok(cat)
    }

    pub fn with_estimator(mut self, estimator: Arc<dyn TokenEstimator>) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn estimator(&self) -> &dyn TokenEstimator {
        self.estimator.as_ref()
    }

    pub fn profile(&self, task: TaskId) -> Arc<TaskProfile> {
        self.profiles
            .get(task.as_str())
            .expect("catalog holds every task")
    }

    pub fn profile_by_name(&self, name: &str) -> Result<Arc<TaskProfile>, PromptError> {
        self.profiles
            .get(name)
            .map_err(|_| PromptError::UnknownTask(name.to_string()))
    }

    pub fn render(
        &self,
        task: TaskId,
        sections: &PromptSections,
        latest_user_message: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        self.profile(task)
            .render(sections, latest_user_message, self.estimator.as_ref())
    }
}

/// Renders `task_id` (by name) with the built-in templates.
pub fn render_prompt(
    task_id: &str,
    sections: &PromptSections,
    latest_user_message: &str,
) -> Result<RenderedPrompt, PromptError> {
    let catalog = builtin_catalog();
    let profile = catalog.profile_by_name(task_id)?;
    profile.render(sections, latest_user_message, catalog.estimator())
}

fn builtin_catalog() -> &'static TaskCatalog {
    static CATALOG: std::sync::OnceLock<TaskCatalog> = std::sync::OnceLock::new();
    CATALOG.get_or_init(TaskCatalog::builtin)
}

/// One few-shot dialogue for the FSB prompt, rendered as a context entry.
pub fn render_demonstration(persona: &[String], turns: &[(Speaker, String)]) -> String {
    let mut out = String::from("Personality:\n");
    for p in persona {
        out.push_str(p);
        out.push('\n');
    }
    out.push_str("Dialogue:\n");
    for (s, text) in turns {
        out.push_str(match s {
            Speaker::User => "User: ",
            Speaker::Agent => "Persona: ",
        });
        out.push_str(text);
        out.push('\n');
    }
    out
}
