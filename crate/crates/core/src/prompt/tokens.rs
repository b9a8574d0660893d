//! Prompt-size estimation.

/// Estimates how many model tokens a text occupies.
pub trait TokenEstimator: Send + Sync + std::fmt::Debug {
    fn estimate(&self, text: &str) -> usize;
}

/// `ceil(words * numerator / denominator)` over whitespace-separated words.
/// Integer arithmetic keeps `ceil` exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WordHeuristic {
    pub numerator: usize,
    pub denominator: usize,
}

impl Default for WordHeuristic {
    fn default() -> Self {
        Self {
            numerator: 135,
            denominator: 100,
        }
    }
}

impl TokenEstimator for WordHeuristic {
    fn estimate(&self, text: &str) -> usize {
        let words = text.split_whitespace().count();
        (words * self.numerator).div_ceil(self.denominator)
    }
}

/// One token per `chars_per_token` characters, rounded up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CharHeuristic {
    pub chars_per_token: usize,
}

impl Default for CharHeuristic {
    fn default() -> Self {
        Self { chars_per_token: 4 }
    }
}

impl TokenEstimator for CharHeuristic {
    fn estimate(&self, text: &str) -> usize {
        text.chars().count().div_ceil(self.chars_per_token.max(1))
    }
}

/// Default estimator: `ceil(whitespace_words * 1.35)`.
pub fn estimate_tokens(text: &str) -> usize {
    WordHeuristic::default().estimate(text)
}

pub fn estimator_registry() -> crate::Registry<dyn TokenEstimator> {
    let mut reg: crate::Registry<dyn TokenEstimator> = crate::Registry::new("token estimator");
    reg.register("words", std::sync::Arc::new(WordHeuristic::default()));
    reg.register("chars", std::sync::Arc::new(CharHeuristic::default()));
    reg
}
