//! Output validation and correction before a generated message is delivered.

mod int;
mod language;
mod persona;
mod report;
mod sentences;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use int::IntFilter;
pub use language::{LanguageDetector, BUILTIN_STOPWORDS, DEFAULT_THRESHOLD};
pub use persona::PersonaFilter;
pub use report::{error_report, ErrorRateReport, IntRates, IntRow, PersonaRow, ReportError};
pub use sentences::{is_complete, sentence_count, sentence_spans, split_sentences, ABBREVIATIONS};

use crate::gateway::{Completion, GatewayError};
use crate::Registry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleId {
    PersonaClaim,
    ParatextTranslation,
    WrongLanguageFirstMsg,
    IncompleteSentence,
    EmptyResponse,
    IntEmpty,
    IntTooLong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Strip,
    Trim,
    RetrySamePrompt,
    RegenerateWithInstruction,
}

impl RuleId {
    pub const ALL: [RuleId; 7] = [
        RuleId::PersonaClaim,
        RuleId::ParatextTranslation,
        RuleId::WrongLanguageFirstMsg,
        RuleId::IncompleteSentence,
        RuleId::EmptyResponse,
        RuleId::IntEmpty,
        RuleId::IntTooLong,
    ];

    pub fn action(self) -> Action {
        match self {
            RuleId::PersonaClaim => Action::Strip,
            RuleId::ParatextTranslation | RuleId::IncompleteSentence => Action::Trim,
            RuleId::WrongLanguageFirstMsg | RuleId::EmptyResponse => Action::RetrySamePrompt,
            RuleId::IntEmpty | RuleId::IntTooLong => Action::RegenerateWithInstruction,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RuleId::PersonaClaim => "persona_claim",
            RuleId::ParatextTranslation => "paratext_translation",
            RuleId::WrongLanguageFirstMsg => "wrong_language_first_msg",
            RuleId::IncompleteSentence => "incomplete_sentence",
            RuleId::EmptyResponse => "empty_response",
            RuleId::IntEmpty => "int_empty",
            RuleId::IntTooLong => "int_too_long",
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RuleId::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown rule `{s}`"))
    }
}

/// `fixed ⊆ detected`, `attempts ≥ 1`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub final_text: String,
    pub detected: BTreeSet<RuleId>,
    pub fixed: BTreeSet<RuleId>,
    /// Generations consumed, the original one included.
    pub attempts: usize,
}

impl FilterOutcome {
    pub fn clean(text: impl Into<String>) -> Self {
        Self {
            final_text: text.into(),
            detected: BTreeSet::new(),
            fixed: BTreeSet::new(),
            attempts: 1,
        }
    }

    pub fn unfixed(&self) -> BTreeSet<RuleId> {
        self.detected.difference(&self.fixed).copied().collect()
    }
}

/// Re-issues the generation of the message being filtered, optionally with
/// an instruction appended after the user message.
pub trait Regenerate {
    fn regenerate(&mut self, extra_instruction: Option<&str>) -> Result<Completion, GatewayError>;
}

impl<F> Regenerate for F
where
    F: FnMut(Option<&str>) -> Result<Completion, GatewayError>,
{
    fn regenerate(&mut self, extra_instruction: Option<&str>) -> Result<Completion, GatewayError> {
        self(extra_instruction)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterContext {
    pub target_language: String,
    pub is_first_agent_message: bool,
}

/// A task-specific filtering strategy.
pub trait ResponseFilter: Send + Sync + fmt::Debug {
    fn apply(
        &self,
        raw: &Completion,
        ctx: &FilterContext,
        regenerate: &mut dyn Regenerate,
    ) -> FilterOutcome;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguageCheck {
    Off,
    FirstMessage,
    EveryMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonaFilterConfig {
    /// Case-insensitive patterns matched at sentence starts.
    pub claim_patterns: Vec<String>,
    pub extra_claim_patterns: Vec<String>,
    /// Spans removed wherever they occur.
    pub stage_direction_patterns: Vec<String>,
    /// Minimum words for a parenthetical to count as a translation.
    pub paratext_min_words: usize,
    pub retry_limit: usize,
    pub language_check: LanguageCheck,
    /// Delivered when every attempt failed, by language code.
    pub fallback: BTreeMap<String, String>,
}

impl Default for PersonaFilterConfig {
    fn default() -> Self {
        let fallback = [
            ("fr", "Pardon, je n'ai pas bien compris. Tu peux répéter ?"),
            (
                "en",
                "Sorry, I did not quite get that. Could you say it again?",
            ),
            ("es", "Perdón, no te he entendido bien. ¿Puedes repetirlo?"),
            (
                "de",
                "Entschuldigung, das habe ich nicht verstanden. Kannst du das wiederholen?",
            ),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self {
            claim_patterns: vec![
                r"en tant qu(?:e|')\s*(?:une?\s+|qu'|l')?(?:assistante?|ia|intelligence artificielle|personnage fictif|modèle de langage|chatbot|robot)\b[^,.!?:;]*[,:;]?\s*".into(),
                r"as an?\s+(?:ai|assistant|language model|fictional character|chatbot)\b[^,.!?:;]*[,:;]?\s*".into(),
            ],
            extra_claim_patterns: Vec::new(),
            stage_direction_patterns: vec![r"\*[^*\n]{1,80}\*".into(), r"\[[^\]\n]{1,80}\]".into()],
            paratext_min_words: 4,
            retry_limit: 2,
            language_check: LanguageCheck::FirstMessage,
            fallback,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntFilterConfig {
    /// Messages with more sentences than this are too long.
    pub max_sentences: usize,
    /// Regenerations allowed for an empty message.
    pub empty_attempts: usize,
    /// Regenerations allowed for a too-long message.
    pub too_long_attempts: usize,
    pub empty_instruction: String,
    pub too_long_instruction: String,
}

impl Default for IntFilterConfig {
    fn default() -> Self {
        Self {
            max_sentences: 3,
            empty_attempts: 2,
            too_long_attempts: 1,
            empty_instruction: "Your response must be a sentence containing a few words.".into(),
            too_long_instruction: "Your response must be one sentence.".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanguageConfig {
    pub threshold: f64,
    /// Extra or replacement wordlists, one word per line.
    pub wordlists: BTreeMap<String, PathBuf>,
}

impl Default for LanguageConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            wordlists: BTreeMap::new(),
        }
    }
}

/// Rule configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub persona: PersonaFilterConfig,
    pub int: IntFilterConfig,
    pub language: LanguageConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum FilterConfigError {
    #[error("{path}: {message}")]
    Load { path: PathBuf, message: String },
    #[error("bad pattern `{pattern}`: {message}")]
    Pattern { pattern: String, message: String },
}

impl FilterConfig {
    pub fn load(path: &Path) -> Result<Self, FilterConfigError> {
        let err = |message: String| FilterConfigError::Load {
            path: path.to_path_buf(),
            message,
        };
        let src = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        toml::from_str(&src).map_err(|e| err(e.to_string()))
    }

    pub fn detector(&self, base: &Path) -> Result<LanguageDetector, FilterConfigError> {
        LanguageDetector::builtin()
            .with_threshold(self.language.threshold)
            .with_files(&self.language.wordlists, base)
            .map_err(|e| FilterConfigError::Load {
                path: base.to_path_buf(),
                message: e.to_string(),
            })
    }
}

/// Strategies by name: `persona` and `int`.
pub fn filter_registry(
    config: &FilterConfig,
    detector: LanguageDetector,
) -> Result<Registry<dyn ResponseFilter>, FilterConfigError> {
    let detector = Arc::new(detector);
    let mut reg: Registry<dyn ResponseFilter> = Registry::new("filter");
    reg.register(
        "persona",
        Arc::new(PersonaFilter::new(
            config.persona.clone(),
            Arc::clone(&detector),
        )?),
    );
    reg.register("int", Arc::new(IntFilter::new(config.int.clone())));
    Ok(reg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn each_rule_has_one_action_and_round_trips() {
        for r in RuleId::ALL {
            let _ = r.action();
            assert_eq!(r.as_str().parse::<RuleId>().unwrap(), r);
            assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{r}\""));
        }
    }

    #[test]
    fn config_from_toml_extends_patterns() {
        let c: FilterConfig = toml::from_str(
            "[persona]\nextra_claim_patterns = ['comme personnage']\nretry_limit = 1\n[int]\nmax_sentences = 4\n",
        )
        .unwrap();
        assert_eq!(c.persona.retry_limit, 1);
        assert_eq!(c.persona.claim_patterns.len(), 2);
        assert_eq!(c.int.max_sentences, 4);
        assert!(toml::from_str::<FilterConfig>("[persona]\nbogus = 1\n").is_err());
        let reg = filter_registry(&c, LanguageDetector::builtin()).unwrap();
        assert_eq!(reg.names().collect::<Vec<_>>(), ["int", "persona"]);
    }

    #[test]
    fn bad_pattern_rejected() {
        let mut c = FilterConfig::default();
        c.persona.extra_claim_patterns.push("(".into());
        assert!(matches!(
            filter_registry(&c, LanguageDetector::builtin()),
            Err(FilterConfigError::Pattern { .. })
        ));
    }
}
