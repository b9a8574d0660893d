//! Error occurrence rates over filtered turns, in the layout of the
//! filtering table: persona rows without totals, INT detected/fixed rows
//! with a total column.

use std::fmt::Write;

use serde::Serialize;

use super::{FilterOutcome, RuleId};
use crate::prompt::{Speaker, TaskId};
use crate::store::Conversation;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersonaRow {
    pub setup: String,
    pub turns: usize,
    pub regex: f64,
    pub language: f64,
    pub incomplete_empty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntRates {
    pub empty: f64,
    pub too_long: f64,
    /// Sum of the two; the categories never co-occur on a message.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntRow {
    pub setup: String,
    pub turns: usize,
    pub detected: IntRates,
    pub fixed: IntRates,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ErrorRateReport {
    pub persona: Vec<PersonaRow>,
    pub int: Vec<IntRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("corpus carries no filter records")]
    NoFilterRecords,
    #[error("session `{session}` turn {turn} was generated but has no filter record")]
    MissingRecord { session: String, turn: usize },
}

struct Group<'a> {
    task: TaskId,
    setup: String,
    outcomes: Vec<&'a FilterOutcome>,
}

fn rate(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

fn count(outcomes: &[&FilterOutcome], pick: impl Fn(&FilterOutcome) -> bool) -> usize {
    outcomes.iter().filter(|o| pick(o)).count()
}

/// Rates per setup over every filtered turn: `turns with the category / turns`.
pub fn error_report(corpus: &[Conversation]) -> Result<ErrorRateReport, ReportError> {
    let mut groups: Vec<Group<'_>> = Vec::new();
    for conv in corpus {
        for (i, turn) in conv.turns.iter().enumerate() {
            let generated_by = match (turn.speaker, &conv.partner) {
                (Speaker::Agent, _) => Some((conv.config.task, &conv.setup_id)),
                (Speaker::User, Some(p)) => Some((p.config.task, &p.setup_id)),
                (Speaker::User, None) => None,
            };
            let Some((task, setup)) = generated_by else {
                continue;
            };
            let Some(outcome) = &turn.filter else {
                return Err(ReportError::MissingRecord {
                    session: conv.session_id.clone(),
                    turn: i,
                });
            };
            let family = task == TaskId::Int;
            let g = match groups
                .iter_mut()
                .position(|g| (g.task == TaskId::Int) == family && &g.setup == setup)
            {
                Some(k) => &mut groups[k],
                None => {
                    groups.push(Group {
                        task,
                        setup: setup.clone(),
                        outcomes: Vec::new(),
                    });
                    groups.last_mut().expect("just pushed")
                }
            };
            g.outcomes.push(outcome);
        }
    }
    if groups.is_empty() {
        return Err(ReportError::NoFilterRecords);
    }
    let mut report = ErrorRateReport::default();
    for g in groups {
        let n = g.outcomes.len();
        let o = &g.outcomes;
        if g.task == TaskId::Int {
            let de = count(o, |x| x.detected.contains(&RuleId::IntEmpty));
            let dl = count(o, |x| x.detected.contains(&RuleId::IntTooLong));
            let fe = count(o, |x| x.fixed.contains(&RuleId::IntEmpty));
            let fl = count(o, |x| x.fixed.contains(&RuleId::IntTooLong));
            report.int.push(IntRow {
                setup: g.setup,
                turns: n,
                detected: IntRates {
                    empty: rate(de, n),
                    too_long: rate(dl, n),
                    total: rate(de + dl, n),
                },
                fixed: IntRates {
                    empty: rate(fe, n),
                    too_long: rate(fl, n),
                    total: rate(fe + fl, n),
                },
            });
        } else {
            let regex = count(o, |x| {
                x.detected.contains(&RuleId::PersonaClaim)
                    || x.detected.contains(&RuleId::ParatextTranslation)
            });
            let language = count(o, |x| x.detected.contains(&RuleId::WrongLanguageFirstMsg));
            let incomplete = count(o, |x| {
                x.detected.contains(&RuleId::IncompleteSentence)
                    || x.detected.contains(&RuleId::EmptyResponse)
            });
            report.persona.push(PersonaRow {
                setup: g.setup,
                turns: n,
                regex: rate(regex, n),
                language: rate(language, n),
                incomplete_empty: rate(incomplete, n),
            });
        }
    }
    Ok(report)
}

fn row(out: &mut String, label: &str, cells: &[String]) {
    let _ = write!(out, "{label:<14}");
    for c in cells {
        let _ = write!(out, " | {c:>18}");
    }
    out.push('\n');
}

impl ErrorRateReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let f = |x: f64| format!("{x:.3}");
        if !self.persona.is_empty() {
            row(
                &mut out,
                "PersonaChat",
                &[
                    "Regex".into(),
                    "Language".into(),
                    "Incomplete / Empty".into(),
                ],
            );
            for r in &self.persona {
                row(
                    &mut out,
                    &r.setup,
                    &[f(r.regex), f(r.language), f(r.incomplete_empty)],
                );
            }
        }
        if !self.int.is_empty() {
            if !out.is_empty() {
                out.push('\n');
            }
            row(
                &mut out,
                "INT",
                &["Empty".into(), "Too Long".into(), "Total".into()],
            );
            let single = self.int.len() == 1;
            for r in &self.int {
                let label = |kind: &str| {
                    if single {
                        kind.to_string()
                    } else {
                        format!("{} {}", r.setup, kind.to_lowercase())
                    }
                };
                for (kind, rates) in [("Detected", r.detected), ("Fixed", r.fixed)] {
                    row(
                        &mut out,
                        &label(kind),
                        &[f(rates.empty), f(rates.too_long), f(rates.total)],
                    );
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}
