//! Absolute 1-5 ratings: three annotators per criterion, the median is the
//! sample score, and setups are compared by mean median.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::Criterion;
use crate::store::Conversation;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScoreError {
    #[error("expected 3 scores, got {0}")]
    WrongCount(usize),
    #[error("score {0} outside 1..=5")]
    OutOfRange(u8),
    #[error("stored median {stored} differs from {actual}")]
    MedianMismatch { stored: u8, actual: u8 },
}

/// Middle value of three scores in 1..=5.
pub fn median_of_three(scores: &[u8]) -> Result<u8, ScoreError> {
    let &[a, b, c] = scores else {
        return Err(ScoreError::WrongCount(scores.len()));
    };
    if let Some(&bad) = scores.iter().find(|s| !(1..=5).contains(*s)) {
        return Err(ScoreError::OutOfRange(bad));
    }
    Ok(a.min(b).max(a.max(b).min(c)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionRating {
    pub conversation_id: String,
    pub criterion: Criterion,
    pub scores: [u8; 3],
    pub median: u8,
}

impl CriterionRating {
    pub fn new(
        conversation_id: &str,
        criterion: Criterion,
        scores: [u8; 3],
    ) -> Result<Self, ScoreError> {
        Ok(Self {
            conversation_id: conversation_id.to_string(),
            criterion,
            scores,
            median: median_of_three(&scores)?,
        })
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        let actual = median_of_three(&self.scores)?;
        if actual != self.median {
            return Err(ScoreError::MedianMismatch {
                stored: self.median,
                actual,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub setup: String,
    /// Mean median per criterion; `None` when no conversation was rated.
    pub means: BTreeMap<Criterion, Option<f64>>,
    pub conversations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
    /// (conversation, criterion) pairs that lacked a rating.
    pub missing: Vec<(String, Criterion)>,
}

/// Mean of medians per setup and criterion over valid rated conversations.
pub fn aggregate_scores(corpus: &[Conversation]) -> ScoreTable {
    struct Acc {
        setup: String,
        sums: BTreeMap<Criterion, (u32, u32)>,
        conversations: usize,
    }
    let mut accs: Vec<Acc> = Vec::new();
    let mut missing = Vec::new();
    for conv in corpus.iter().filter(|c| c.valid && !c.ratings.is_empty()) {
        let k = match accs.iter().position(|a| a.setup == conv.setup_id) {
            Some(k) => k,
            None => {
                accs.push(Acc {
                    setup: conv.setup_id.clone(),
                    sums: BTreeMap::new(),
                    conversations: 0,
                });
                accs.len() - 1
            }
        };
        let acc = &mut accs[k];
        acc.conversations += 1;
        for criterion in Criterion::rating_criteria(conv.task()) {
            let entry = acc.sums.entry(criterion).or_insert((0, 0));
            match conv.ratings.iter().find(|r| r.criterion == criterion) {
                Some(r) => {
                    entry.0 += u32::from(r.median);
                    entry.1 += 1;
                }
                None => missing.push((conv.session_id.clone(), criterion)),
            }
        }
    }
    ScoreTable {
        rows: accs
            .into_iter()
            .map(|a| ScoreRow {
                setup: a.setup,
                means: a
                    .sums
                    .into_iter()
                    .map(|(c, (sum, n))| (c, (n > 0).then(|| f64::from(sum) / f64::from(n))))
                    .collect(),
                conversations: a.conversations,
            })
            .collect(),
        missing,
    }
}

/// Average score per criterion, two decimals.
pub fn render_score_table(table: &ScoreTable, criteria: &[Criterion]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<24}", "Config.");
    for c in criteria {
        let _ = write!(out, " | {:>12}", c.title());
    }
    out.push('\n');
    for row in &table.rows {
        let _ = write!(out, "{:<24}", row.setup);
        for c in criteria {
            match row.means.get(c).copied().flatten() {
                Some(m) => {
                    let _ = write!(out, " | {:>12.2}", m);
                }
                None => {
                    let _ = write!(out, " | {:>12}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}
