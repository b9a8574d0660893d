//! Line-delimited corpus documents: one JSON conversation per line.

use std::fs;
use std::path::{Path, PathBuf};

use super::Conversation;
use crate::prompt::TaskId;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusFilter {
    pub task: Option<TaskId>,
    pub setup_id: Option<String>,
    pub valid_only: bool,
}

impl CorpusFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn matches(&self, c: &Conversation) -> bool {
        self.task.is_none_or(|t| c.task() == t)
            && self.setup_id.as_ref().is_none_or(|s| &c.setup_id == s)
            && (!self.valid_only || c.valid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImportMode {
    /// Skip malformed lines and report them.
    Lenient,
    /// Abort on the first malformed line.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub file: Option<PathBuf>,
    /// 1-based.
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.file {
            Some(p) => write!(f, "{}:{}: {}", p.display(), self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{0}")]
    Line(LineError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Imported {
    pub conversations: Vec<Conversation>,
    pub errors: Vec<LineError>,
}

pub fn export_corpus<'a>(conversations: impl IntoIterator<Item = &'a Conversation>) -> String {
    let mut out = String::new();
    for c in conversations {
        out.push_str(&serde_json::to_string(c).expect("conversation serializes"));
        out.push('\n');
    }
    out
}

fn parse_line(line: &str) -> Result<Conversation, String> {
    let conv: Conversation = serde_json::from_str(line).map_err(|e| e.to_string())?;
    conv.validate().map_err(|e| e.to_string())?;
    Ok(conv)
}

fn import_into(
    doc: &str,
    file: Option<&Path>,
    mode: ImportMode,
    out: &mut Imported,
) -> Result<(), CorpusError> {
    for (i, line) in doc.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(c) => out.conversations.push(c),
            Err(message) => {
                let err = LineError {
                    file: file.map(Path::to_path_buf),
                    line: i + 1,
                    message,
                };
                match mode {
                    ImportMode::Strict => return Err(CorpusError::Line(err)),
                    ImportMode::Lenient => out.errors.push(err),
                }
            }
        }
    }
    Ok(())
}

pub fn import_corpus(doc: &str, mode: ImportMode) -> Result<Imported, CorpusError> {
    let mut out = Imported::default();
    import_into(doc, None, mode, &mut out)?;
    Ok(out)
}

fn collect_files(path: &Path, files: &mut Vec<PathBuf>) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    if path.is_file() {
        files.push(path.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    entries.sort();
    for e in entries {
        let hidden = e
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.'));
        let tmp = e.extension().is_some_and(|x| x == "tmp");
        if !hidden && !tmp {
            collect_files(&e, files)?;
        }
    }
    Ok(())
}

/// Reads a corpus file, or every file below a directory in path order.
pub fn load_corpus_path(path: &Path, mode: ImportMode) -> Result<Imported, CorpusError> {
    let mut files = Vec::new();
    collect_files(path, &mut files)?;
    let mut out = Imported::default();
    for f in files {
        let doc = fs::read_to_string(&f).map_err(|source| CorpusError::Io {
            path: f.clone(),
            source,
        })?;
        import_into(&doc, Some(&f), mode, &mut out)?;
    }
    Ok(out)
}
