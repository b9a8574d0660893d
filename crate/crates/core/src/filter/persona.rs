//! Filter for the persona tasks: persona-claim stripping, paratext removal,
//! first-message language check and unfinished-sentence trimming.

use std::collections::BTreeSet;
use std::sync::Arc;

use regex::Regex;

use super::sentences::{is_complete, sentence_spans};
use super::{
    FilterConfigError, FilterContext, FilterOutcome, LanguageCheck, LanguageDetector,
    PersonaFilterConfig, Regenerate, ResponseFilter, RuleId,
};
use crate::gateway::{Completion, FinishReason};
use crate::text::word_tokens;

#[derive(Debug)]
pub struct PersonaFilter {
    config: PersonaFilterConfig,
    claims: Vec<Regex>,
    stage_directions: Vec<Regex>,
    detector: Arc<LanguageDetector>,
}

fn compile(pattern: &str, anchored: bool) -> Result<Regex, FilterConfigError> {
    let src = if anchored {
        format!("(?i)^(?:{pattern})")
    } else {
        pattern.to_string()
    };
    Regex::new(&src).map_err(|e| FilterConfigError::Pattern {
        pattern: pattern.to_string(),
        message: e.to_string(),
    })
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn has_content(s: &str) -> bool {
    s.chars().any(char::is_alphanumeric)
}

/// Collapses the space runs left behind by removals.
fn tidy(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for line in s.split('\n') {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(
            &line
                .split(' ')
                .filter(|w| !w.is_empty())
                .collect::<Vec<_>>()
                .join(" "),
        );
    }
    out.trim().to_string()
}

enum Problem {
    Empty,
    WrongLanguage,
    Unfinished,
}

impl PersonaFilter {
    pub fn new(
        config: PersonaFilterConfig,
        detector: Arc<LanguageDetector>,
    ) -> Result<Self, FilterConfigError> {
        let claims = config
            .claim_patterns
            .iter()
            .chain(&config.extra_claim_patterns)
            .map(|p| compile(p, true))
            .collect::<Result<_, _>>()?;
        let stage_directions = config
            .stage_direction_patterns
            .iter()
            .map(|p| compile(p, false))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            config,
            claims,
            stage_directions,
            detector,
        })
    }

    pub fn config(&self) -> &PersonaFilterConfig {
        &self.config
    }

    /// Removes persona claims opening any sentence and capitalizes what
    /// follows. `None` when nothing matched.
    pub fn strip_claims(&self, text: &str) -> Option<String> {
        let mut out = text.to_string();
        let mut changed = false;
        for r in sentence_spans(text).into_iter().rev() {
            let sentence = &text[r.clone()];
            let Some(m) = self.claims.iter().find_map(|re| re.find(sentence)) else {
                continue;
            };
            let rest = &sentence[m.end()..];
            let replacement = if has_content(rest) {
                capitalize(rest)
            } else {
                String::new()
            };
            out.replace_range(r, &replacement);
            changed = true;
        }
        changed.then(|| tidy(&out))
    }

    /// Cuts the text at the first parenthetical written in another language
    /// than `target`, then removes stage directions. `None` when nothing
    /// matched.
    pub fn strip_paratext(&self, text: &str, target: &str) -> Option<String> {
        let mut out = text.to_string();
        let mut changed = false;
        for (open, _) in text.match_indices('(') {
            let inner_end = text[open..].find(')').map_or(text.len(), |k| open + k);
            let inner = &text[open + 1..inner_end];
            if word_tokens(inner).count() < self.config.paratext_min_words {
                continue;
            }
            if self.detector.detect(inner).is_some_and(|l| l != target) {
                out.truncate(open);
                changed = true;
                break;
            }
        }
        for re in &self.stage_directions {
            if re.is_match(&out) {
                out = re.replace_all(&out, "").into_owned();
                changed = true;
            }
        }
        changed.then(|| tidy(&out))
    }

    fn checks_language(&self, ctx: &FilterContext) -> bool {
        match self.config.language_check {
            LanguageCheck::Off => false,
            LanguageCheck::FirstMessage => ctx.is_first_agent_message,
            LanguageCheck::EveryMessage => true,
        }
    }

    fn fallback(&self, lang: &str) -> String {
        self.config
            .fallback
            .get(lang)
            .or_else(|| self.config.fallback.get("en"))
            .cloned()
            .unwrap_or_else(|| "...".to_string())
    }

    pub fn filter(
        &self,
        raw: &Completion,
        ctx: &FilterContext,
        regenerate: &mut dyn Regenerate,
    ) -> FilterOutcome {
        let mut detected = BTreeSet::new();
        let mut fixed = BTreeSet::new();
        let mut pending = BTreeSet::new();
        let mut attempts = 1;
        let mut best: Option<String> = None;
        let mut current = raw.clone();
        loop {
            let mut text = current.text.trim().to_string();
            if let Some(t) = self.strip_claims(&text) {
                detected.insert(RuleId::PersonaClaim);
                fixed.insert(RuleId::PersonaClaim);
                text = t;
            }
            if let Some(t) = self.strip_paratext(&text, &ctx.target_language) {
                detected.insert(RuleId::ParatextTranslation);
                fixed.insert(RuleId::ParatextTranslation);
                text = t;
            }
            let mut problem = None;
            if text.is_empty() {
                problem = Some(Problem::Empty);
            } else if self.checks_language(ctx)
                && self
                    .detector
                    .detect(&text)
                    .is_some_and(|l| l != ctx.target_language)
            {
                problem = Some(Problem::WrongLanguage);
            } else if current.finish_reason == FinishReason::LengthLimit {
                let spans = sentence_spans(&text);
                let last = spans.last().expect("non-empty text has a sentence");
                if !is_complete(&text[last.clone()]) {
                    detected.insert(RuleId::IncompleteSentence);
                    if spans.len() > 1 {
                        text = text[..last.start].trim_end().to_string();
                        fixed.insert(RuleId::IncompleteSentence);
                    } else {
                        problem = Some(Problem::Unfinished);
                    }
                }
            }
            let rule = match problem {
                None => {
                    fixed.extend(pending);
                    return FilterOutcome {
                        final_text: text,
                        detected,
                        fixed,
                        attempts,
                    };
                }
                Some(Problem::Empty) => RuleId::EmptyResponse,
                Some(Problem::WrongLanguage) => RuleId::WrongLanguageFirstMsg,
                Some(Problem::Unfinished) => RuleId::IncompleteSentence,
            };
            detected.insert(rule);
            pending.insert(rule);
            if !text.is_empty() {
                best = Some(text);
            }
            if attempts > self.config.retry_limit {
                break;
            }
            attempts += 1;
            match regenerate.regenerate(None) {
                Ok(c) => current = c,
                Err(e) => {
                    log::warn!("regeneration failed: {e}");
                    break;
                }
            }
        }
        fixed.retain(|r| !pending.contains(r));
        FilterOutcome {
            final_text: best.unwrap_or_else(|| self.fallback(&ctx.target_language)),
            detected,
            fixed,
            attempts,
        }
    }
}

impl ResponseFilter for PersonaFilter {
    fn apply(
        &self,
        raw: &Completion,
        ctx: &FilterContext,
        regenerate: &mut dyn Regenerate,
    ) -> FilterOutcome {
        self.filter(raw, ctx, regenerate)
    }
}
