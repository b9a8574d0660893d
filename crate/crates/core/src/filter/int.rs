//! Filter for the image-based task: empty and too-long messages are
//! regenerated with a length instruction appended to the user message.

use std::collections::BTreeSet;

use super::sentences::sentence_count;
use super::{FilterContext, FilterOutcome, IntFilterConfig, Regenerate, ResponseFilter, RuleId};
use crate::gateway::Completion;

#[derive(Debug, Clone, Default)]
pub struct IntFilter {
    config: IntFilterConfig,
}

impl IntFilter {
    pub fn new(config: IntFilterConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &IntFilterConfig {
        &self.config
    }

    fn too_long(&self, text: &str) -> bool {
        sentence_count(text) > self.config.max_sentences
    }

    fn acceptable(&self, text: &str) -> bool {
        !text.is_empty() && !self.too_long(text)
    }

    pub fn filter(&self, raw: &str, regenerate: &mut dyn Regenerate) -> FilterOutcome {
        let text = raw.trim().to_string();
        let (rule, instruction, budget) = if text.is_empty() {
            (
                RuleId::IntEmpty,
                &self.config.empty_instruction,
                self.config.empty_attempts,
            )
        } else if self.too_long(&text) {
            (
                RuleId::IntTooLong,
                &self.config.too_long_instruction,
                self.config.too_long_attempts,
            )
        } else {
            return FilterOutcome::clean(text);
        };
        let mut out = FilterOutcome {
            final_text: text,
            detected: BTreeSet::from([rule]),
            fixed: BTreeSet::new(),
            attempts: 1,
        };
        for _ in 0..budget {
            out.attempts += 1;
            match regenerate.regenerate(Some(instruction)) {
                Ok(c) => {
                    let candidate = c.text.trim();
                    if self.acceptable(candidate) {
                        out.final_text = candidate.to_string();
                        out.fixed.insert(rule);
                        break;
                    }
                }
                Err(e) => {
                    log::warn!("regeneration failed: {e}");
                    break;
                }
            }
        }
        out
    }
}

impl ResponseFilter for IntFilter {
    fn apply(
        &self,
        raw: &Completion,
        _ctx: &FilterContext,
        regenerate: &mut dyn Regenerate,
    ) -> FilterOutcome {
        self.filter(&raw.text, regenerate)
    }
}
