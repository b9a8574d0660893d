//! Prompt assembly: P^t = sigma_task(I_s, C^t, I_a, X^{t-1}).

mod permutation;
mod sections;
mod task;
mod template;
mod tokens;
mod truncate;

pub use permutation::{apply_permutation, SigmaPermutation};
pub use sections::{
    ContextEntry, ContextKind, ConversationHistory, HistoryTurn, PromptSections,
    ResponseInstructions, Section, SituationalContext, Speaker, SystemInstructions,
};
pub use task::{
    render_demonstration, render_prompt, RenderedPrompt, SpeakerLabels, TaskCatalog, TaskId,
    TaskProfile, UserMessagePlacement, BUILTIN_TEMPLATES,
};
pub use template::{Rendered, Template};
pub use tokens::{
    estimate_tokens, estimator_registry, CharHeuristic, TokenEstimator, WordHeuristic,
};
pub use truncate::{
    truncate_history, truncate_history_by_text, Truncation, DEFAULT_CONTEXT_TOKENS,
    DEFAULT_GENERATION_RESERVE, DEFAULT_MIN_KEEP_PAIRS, DEFAULT_TOKEN_BUDGET,
};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("invalid permutation {0}: expected a bijection on the four sections")]
    InvalidPermutation(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("template `{template}` is missing slot `{slot}`")]
    MissingSlot { template: String, slot: String },
    #[error("template `{template}`: {message}")]
    TemplateSyntax { template: String, message: String },
    #[error("template for `{task}` lays out sections {found:?}, task order is {expected:?}")]
    SectionOrder {
        task: String,
        expected: Vec<Section>,
        found: Vec<Section>,
    },
    #[error("invalid history: {0}")]
    InvalidHistory(String),
    #[error("invalid section: {0}")]
    InvalidSection(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
