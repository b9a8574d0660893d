//! Append-only battle ledger, one JSON battle per line.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::BattleResult;

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("annotator `{annotator}` already judged {a} vs {b}")]
    AlreadyJudged {
        annotator: String,
        a: String,
        b: String,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug)]
pub struct BattleLedger {
    path: Option<PathBuf>,
    battles: Mutex<Vec<BattleResult>>,
}

fn same_pair(b: &BattleResult, annotator: &str, x: &str, y: &str) -> bool {
    b.annotator_id == annotator
        && ((b.conversation_a == x && b.conversation_b == y)
            || (b.conversation_a == y && b.conversation_b == x))
}

impl BattleLedger {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            battles: Mutex::new(Vec::new()),
        }
    }

    /// Opens the ledger at `path`, reading existing battles; a missing file
    /// is an empty ledger.
    pub fn open(path: &Path) -> Result<Self, LedgerError> {
        let mut battles = Vec::new();
        if path.exists() {
            let src = fs::read_to_string(path).map_err(|source| LedgerError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            battles = parse_ledger(&src).map_err(|(line, message)| LedgerError::Parse {
                path: path.to_path_buf(),
                line,
                message,
            })?;
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            battles: Mutex::new(battles),
        })
    }

    pub fn has_judged(&self, annotator: &str, conv_x: &str, conv_y: &str) -> bool {
        self.battles
            .lock()
            .expect("ledger lock")
            .iter()
            .any(|b| same_pair(b, annotator, conv_x, conv_y))
    }

    /// Appends `battle`; the same annotator cannot judge the same pair twice.
    pub fn append(&self, battle: BattleResult) -> Result<(), LedgerError> {
        let mut battles = self.battles.lock().expect("ledger lock");
        if battles.iter().any(|b| {
            same_pair(
                b,
                &battle.annotator_id,
                &battle.conversation_a,
                &battle.conversation_b,
            )
        }) {
            return Err(LedgerError::AlreadyJudged {
                annotator: battle.annotator_id,
                a: battle.conversation_a,
                b: battle.conversation_b,
            });
        }
        if let Some(path) = &self.path {
            let io = |source| LedgerError::Io {
                path: path.clone(),
                source,
            };
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(io)?;
            }
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(io)?;
            let line = serde_json::to_string(&battle).expect("battle serializes");
            writeln!(f, "{line}")
                .and_then(|_| f.sync_data())
                .map_err(io)?;
        }
        battles.push(battle);
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<BattleResult> {
        self.battles.lock().expect("ledger lock").clone()
    }

    pub fn len(&self) -> usize {
        self.battles.lock().expect("ledger lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parses a ledger document; errors carry the 1-based line number.
pub fn parse_ledger(src: &str) -> Result<Vec<BattleResult>, (usize, String)> {
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::{Criterion, Verdict};

    fn battle(ann: &str, a: &str, b: &str) -> BattleResult {
        BattleResult {
            conversation_a: a.into(),
            conversation_b: b.into(),
            setup_a: "x".into(),
            setup_b: "y".into(),
            verdicts: [(Criterion::Overall, Verdict::AWins)].into_iter().collect(),
            annotator_id: ann.into(),
            timestamp: 1,
        }
    }

    #[test]
    fn duplicate_judgement_rejected_and_file_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("battles.jsonl");
        let l = BattleLedger::open(&path).unwrap();
        l.append(battle("ann1", "c1", "c2")).unwrap();
        assert!(matches!(
            l.append(battle("ann1", "c2", "c1")),
            Err(LedgerError::AlreadyJudged { .. })
        ));
        l.append(battle("ann2", "c1", "c2")).unwrap();
        let again = BattleLedger::open(&path).unwrap();
        assert_eq!(again.snapshot(), l.snapshot());
        assert_eq!(again.len(), 2);
    }

    #[test]
    fn parse_error_has_line() {
        let ok = serde_json::to_string(&battle("a", "1", "2")).unwrap();
        let err = parse_ledger(&format!("{ok}\n\n{{oops\n")).unwrap_err();
        assert_eq!(err.0, 3);
    }
}
