//! Pairwise battles with Elo ratings, and median-of-three absolute scores.

mod elo;
mod ledger;
mod scores;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use elo::{
    expected_score, rank, render_elo_table, replay, update, EloConfig, EloTable, RankEntry,
    RatingChange,
};
pub use ledger::{parse_ledger, BattleLedger, LedgerError};
pub use scores::{
    aggregate_scores, median_of_three, render_score_table, CriterionRating, ScoreError, ScoreRow,
    ScoreTable,
};

use crate::prompt::TaskId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Overall,
    Coherence,
    Engagingness,
    Humanness,
    Achievement,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [
        Criterion::Overall,
        Criterion::Coherence,
        Criterion::Engagingness,
        Criterion::Humanness,
        Criterion::Achievement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Overall => "overall",
            Criterion::Coherence => "coherence",
            Criterion::Engagingness => "engagingness",
            Criterion::Humanness => "humanness",
            Criterion::Achievement => "achievement",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Criterion::Overall => "Overall",
            Criterion::Coherence => "Coherence",
            Criterion::Engagingness => "Engagingness",
            Criterion::Humanness => "Humanness",
            Criterion::Achievement => "Achievement",
        }
    }

    /// Criteria judged in battles for `task`.
    pub fn battle_criteria(task: TaskId) -> Vec<Criterion> {
        let mut c = vec![
            Criterion::Overall,
            Criterion::Coherence,
            Criterion::Engagingness,
            Criterion::Humanness,
        ];
        if task == TaskId::Int {
            c.push(Criterion::Achievement);
        }
        c
    }

    /// Criteria rated 1 to 5 for `task`.
    pub fn rating_criteria(task: TaskId) -> Vec<Criterion> {
        let mut c = Self::battle_criteria(task);
        c.remove(0);
        c
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown criterion `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    AWins,
    BWins,
    Tie,
}

impl Verdict {
    /// Score S of side A.
    pub fn score_a(self) -> f64 {
        match self {
            Verdict::AWins => 1.0,
            Verdict::BWins => 0.0,
            Verdict::Tie => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BattleResult {
    pub conversation_a: String,
    pub conversation_b: String,
    pub setup_a: String,
    pub setup_b: String,
    pub verdicts: BTreeMap<Criterion, Verdict>,
    pub annotator_id: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BattleError {
    #[error("a battle needs two distinct setups, got `{0}` twice")]
    SameSetup(String),
    #[error("verdict for unconfigured criterion `{0}`")]
    UnconfiguredCriterion(Criterion),
    #[error("missing verdict for criterion `{0}`")]
    MissingCriterion(Criterion),
}

impl BattleResult {
    pub fn validate(&self, criteria: &[Criterion]) -> Result<(), BattleError> {
        if self.setup_a == self.setup_b {
            return Err(BattleError::SameSetup(self.setup_a.clone()));
        }
        if let Some(c) = self.verdicts.keys().find(|c| !criteria.contains(c)) {
            return Err(BattleError::UnconfiguredCriterion(*c));
        }
        if let Some(c) = criteria.iter().find(|c| !self.verdicts.contains_key(c)) {
            return Err(BattleError::MissingCriterion(*c));
        }
        Ok(())
    }
}
