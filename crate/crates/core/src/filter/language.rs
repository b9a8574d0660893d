//! Stopword-ratio language identification.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use crate::text::lower_tokens;

pub const DEFAULT_THRESHOLD: f64 = 0.05;

pub const BUILTIN_STOPWORDS: [(&str, &str); 4] = [
    ("fr", include_str!("../../assets/stopwords/fr.txt")),
    ("en", include_str!("../../assets/stopwords/en.txt")),
    ("es", include_str!("../../assets/stopwords/es.txt")),
    ("de", include_str!("../../assets/stopwords/de.txt")),
];

#[derive(Debug, Clone)]
pub struct LanguageDetector {
    lists: Vec<(String, HashSet<String>)>,
    threshold: f64,
}

fn parse_list(src: &str) -> HashSet<String> {
    src.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

impl LanguageDetector {
    pub fn builtin() -> Self {
        Self {
            lists: BUILTIN_STOPWORDS
                .iter()
                .map(|(code, src)| (code.to_string(), parse_list(src)))
                .collect(),
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    /// Adds or replaces the wordlist for `code`.
    pub fn with_list(mut self, code: &str, words: &str) -> Self {
        let list = parse_list(words);
        match self.lists.iter_mut().find(|(c, _)| c == code) {
            Some(entry) => entry.1 = list,
            None => self.lists.push((code.to_string(), list)),
        }
        self
    }

    pub fn with_files(
        mut self,
        files: &BTreeMap<String, std::path::PathBuf>,
        base: &Path,
    ) -> std::io::Result<Self> {
        for (code, path) in files {
            let src = std::fs::read_to_string(base.join(path))?;
            self = self.with_list(code, &src);
        }
        Ok(self)
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.lists.iter().map(|(c, _)| c.as_str())
    }

    /// Share of tokens found in each wordlist, in list order.
    pub fn ratios(&self, text: &str) -> Vec<(&str, f64)> {
        let tokens = lower_tokens(text);
        self.lists
            .iter()
            .map(|(code, list)| {
                let ratio = if tokens.is_empty() {
                    0.0
                } else {
                    tokens.iter().filter(|t| list.contains(t.as_str())).count() as f64
                        / tokens.len() as f64
                };
                (code.as_str(), ratio)
            })
            .collect()
    }

    /// Language with the highest ratio, earlier lists winning ties; `None`
    /// when every ratio is below the threshold.
    pub fn detect(&self, text: &str) -> Option<&str> {
        let mut best: Option<(&str, f64)> = None;
        for (code, r) in self.ratios(text) {
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((code, r));
            }
        }
        best.filter(|&(_, r)| r >= self.threshold).map(|(c, _)| c)
    }
}

impl Default for LanguageDetector {
    fn default() -> Self {
        Self::builtin()
    }
}
