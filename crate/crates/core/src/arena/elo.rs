use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{BattleError, BattleResult, Criterion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EloConfig {
    pub initial_rating: f64,
    pub k_factor: f64,
    pub criteria: Vec<Criterion>,
}

impl Default for EloConfig {
    fn default() -> Self {
        Self {
            initial_rating: 1000.0,
            k_factor: 32.0,
            criteria: vec![
                Criterion::Overall,
                Criterion::Coherence,
                Criterion::Engagingness,
                Criterion::Humanness,
            ],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EloTable {
    pub ratings: BTreeMap<Criterion, BTreeMap<String, f64>>,
    pub updates: usize,
}

impl EloTable {
    pub fn rating(&self, criterion: Criterion, setup: &str) -> Option<f64> {
        self.ratings.get(&criterion)?.get(setup).copied()
    }

    pub fn setups(&self) -> Vec<String> {
        let mut s: Vec<String> = self
            .ratings
            .values()
            .flat_map(|m| m.keys().cloned())
            .collect();
        s.sort();
        s.dedup();
        s
    }
}

/// E_A = 1 / (1 + 10^((r_b − r_a) / 400)).
pub fn expected_score(r_a: f64, r_b: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf((r_b - r_a) / 400.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatingChange {
    pub criterion: Criterion,
    pub delta_a: f64,
    pub delta_b: f64,
}

/// Applies one battle: for each judged criterion, A moves by K(S − E_A) and
/// B by the opposite amount.
pub fn update(
    table: &mut EloTable,
    battle: &BattleResult,
    config: &EloConfig,
) -> Result<Vec<RatingChange>, BattleError> {
    battle.validate(&config.criteria)?;
    let mut changes = Vec::with_capacity(battle.verdicts.len());
    for (&criterion, verdict) in &battle.verdicts {
        let ratings = table.ratings.entry(criterion).or_default();
        let ra = *ratings
            .entry(battle.setup_a.clone())
            .or_insert(config.initial_rating);
        let rb = *ratings
            .entry(battle.setup_b.clone())
            .or_insert(config.initial_rating);
        let delta = config.k_factor * (verdict.score_a() - expected_score(ra, rb));
        ratings.insert(battle.setup_a.clone(), ra + delta);
        ratings.insert(battle.setup_b.clone(), rb - delta);
        changes.push(RatingChange {
            criterion,
            delta_a: delta,
            delta_b: -delta,
        });
    }
    table.updates += 1;
    Ok(changes)
}

/// Folds `battles` in timestamp order; equal timestamps keep ledger order.
pub fn replay(battles: &[BattleResult], config: &EloConfig) -> Result<EloTable, BattleError> {
    let mut order: Vec<&BattleResult> = battles.iter().collect();
    order.sort_by_key(|b| b.timestamp);
    let mut table = EloTable::default();
    for b in order {
        update(&mut table, b, config)?;
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankEntry {
    pub setup: String,
    pub rating: f64,
    /// 1-based; tied ratings share a rank.
    pub rank: usize,
}

/// Descending rating, ties by setup id.
pub fn rank(table: &EloTable, criterion: Criterion) -> Vec<RankEntry> {
    let Some(ratings) = table.ratings.get(&criterion) else {
        return Vec::new();
    };
    let mut entries: Vec<(&String, f64)> = ratings.iter().map(|(s, r)| (s, *r)).collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut out: Vec<RankEntry> = Vec::with_capacity(entries.len());
    for (i, (setup, rating)) in entries.into_iter().enumerate() {
        let rank = match out.last() {
            Some(prev) if prev.rating == rating => prev.rank,
            _ => i + 1,
        };
        out.push(RankEntry {
            setup: setup.clone(),
            rating,
            rank,
        });
    }
    out
}

/// Ratings per setup, ordered by overall rank, with a rank column.
pub fn render_elo_table(table: &EloTable, criteria: &[Criterion]) -> String {
    let primary = criteria.first().copied().unwrap_or(Criterion::Overall);
    let mut out = String::new();
    let _ = write!(out, "{:<24}", "Setup");
    for c in criteria {
        let _ = write!(out, " | {:>12}", c.title());
    }
    let _ = writeln!(out, " | {:>4}", "Rank");
    for entry in rank(table, primary) {
        let _ = write!(out, "{:<24}", entry.setup);
        for &c in criteria {
            match table.rating(c, &entry.setup) {
                Some(r) => {
                    let _ = write!(out, " | {:>12.0}", r);
                }
                None => {
                    let _ = write!(out, " | {:>12}", "-");
                }
            }
        }
        let _ = writeln!(out, " | {:>4}", entry.rank);
    }
    out
}
