//! Token-budget history truncation.

use super::{ConversationHistory, HistoryTurn};

/// Budget defaults: a 2048-token context minus a 256-token generation reserve.
pub const DEFAULT_CONTEXT_TOKENS: usize = 2048;
pub const DEFAULT_GENERATION_RESERVE: usize = 256;
pub const DEFAULT_TOKEN_BUDGET: usize = DEFAULT_CONTEXT_TOKENS - DEFAULT_GENERATION_RESERVE;
pub const DEFAULT_MIN_KEEP_PAIRS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Truncation {
    pub kept: ConversationHistory,
    /// Removed turn pairs, oldest first.
    pub removed: Vec<Vec<HistoryTurn>>,
}

impl Truncation {
    pub fn removed_turns(&self) -> usize {
        self.removed.iter().map(Vec::len).sum()
    }
}

/// Keeps the longest suffix of whole pairs whose `cost` fits in `token_budget`,
/// and never fewer than `min_keep` pairs (or the whole history if shorter).
///
/// `cost` receives a candidate kept history and returns its estimated prompt
/// size; it must be monotone in the number of kept pairs.
pub fn truncate_history<F>(
    history: &ConversationHistory,
    token_budget: usize,
    min_keep: usize,
    cost: F,
) -> Truncation
where
    F: Fn(&ConversationHistory) -> usize,
{
    let pairs = history.pair_count();
    let floor = min_keep.max(1).min(pairs);
    // number of pairs kept; grow from the floor while the next suffix fits
    let mut keep = floor;
    if cost(&history.suffix_from_pair(pairs - keep)) <= token_budget {
        while keep < pairs && cost(&history.suffix_from_pair(pairs - keep - 1)) <= token_budget {
            keep += 1;
        }
    }
    let drop = pairs - keep;
    let kept = history.suffix_from_pair(drop);
    let removed = history.pairs().take(drop).map(<[_]>::to_vec).collect();
    Truncation { kept, removed }
}

/// Truncation using the history's own rendered size under `estimator`.
pub fn truncate_history_by_text(
    history: &ConversationHistory,
    token_budget: usize,
    min_keep: usize,
    estimator: &dyn super::TokenEstimator,
) -> Truncation {
    truncate_history(history, token_budget, min_keep, |h| {
        h.turns().iter().map(|t| estimator.estimate(&t.text)).sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{estimate_tokens, Speaker};
    use proptest::prelude::*;

    fn history(n_turns: usize, words: impl Fn(usize) -> usize) -> ConversationHistory {
        let turns = (0..n_turns)
            .map(|i| {
                let s = if i % 2 == 0 {
                    Speaker::User
                } else {
                    Speaker::Agent
                };
                HistoryTurn::new(s, vec!["mot"; words(i).max(1)].join(" "))
            })
            .collect();
        ConversationHistory::new(turns).unwrap()
    }

    fn text_cost(h: &ConversationHistory) -> usize {
        h.turns().iter().map(|t| estimate_tokens(&t.text)).sum()
    }

    /// Tries every suffix and returns the longest fitting pair count.
    fn oracle_keep(h: &ConversationHistory, budget: usize, min_keep: usize) -> usize {
        let pairs = h.pair_count();
        let mut best = None;
        for keep in 0..=pairs {
            if text_cost(&h.suffix_from_pair(pairs - keep)) <= budget {
                best = Some(keep);
            }
        }
        best.unwrap_or(0).max(min_keep.min(pairs))
    }

    #[test]
    fn under_budget_keeps_everything() {
        let h = history(6, |_| 3);
        let t = truncate_history(&h, 10_000, 1, text_cost);
        assert_eq!(t.kept, h);
        assert!(t.removed.is_empty());
    }

    #[test]
    fn tight_budget_drops_oldest_prefix() {
        let h = history(40, |i| 2 + (i * 7) % 11);
        // 20 pairs, budget 60: last pair costs 6+15, the one before 17+11 (49),
        // the next would reach 69
        let t = truncate_history(&h, 60, 1, text_cost);
        assert_eq!(t.kept.pair_count(), oracle_keep(&h, 60, 1));
        assert_eq!(t.kept.pair_count(), 2);
        assert_eq!(t.removed.len(), 18);
        assert_eq!(t.removed[0][0], h.turns()[0]);
    }

    #[test]
    fn budget_below_any_suffix_keeps_min() {
        let h = history(8, |_| 50);
        let t = truncate_history(&h, 1, 1, text_cost);
        assert_eq!(t.kept.turns(), &h.turns()[6..]);
        assert_eq!(t.removed.len(), 3);
    }

    #[test]
    fn empty_history() {
        let h = ConversationHistory::empty();
        let t = truncate_history(&h, 1, 2, text_cost);
        assert!(t.kept.is_empty() && t.removed.is_empty());
    }

    proptest! {
        #[test]
        fn matches_exhaustive_oracle(
            words in proptest::collection::vec(1usize..30, 0..40),
            budget in 1usize..400,
            min_keep in 1usize..4,
        ) {
            let h = history(words.len(), |i| words[i]);
            let t = truncate_history(&h, budget, min_keep, text_cost);
            prop_assert_eq!(t.kept.pair_count(), oracle_keep(&h, budget, min_keep));
            // removed + kept reconstructs the input, in order
            let mut all: Vec<HistoryTurn> = t.removed.concat();
            all.extend(t.kept.turns().iter().cloned());
            prop_assert_eq!(all.as_slice(), h.turns());
        }
    }
}
