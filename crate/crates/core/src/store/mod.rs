//! Session lifecycle, turn ledger and flat-file persistence.
//!
//! Layout on disk: `<root>/<task>/<session_id>`, each file holding the
//! conversation as a single corpus line.

mod config;
mod corpus;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use config::{ConfigViolations, Demonstration, FieldViolation, SessionConfig};
pub use corpus::{
    export_corpus, import_corpus, load_corpus_path, CorpusError, CorpusFilter, ImportMode,
    Imported, LineError,
};

use crate::arena::CriterionRating;
use crate::filter::FilterOutcome;
use crate::memory::MemoryState;
use crate::prompt::{HistoryTurn, Speaker, TaskId};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid session config: {0}")]
    InvalidConfig(#[from] ConfigViolations),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{0}` already exists")]
    DuplicateSession(String),
    #[error("turn {index}: {speaker} cannot follow {speaker}")]
    Alternation { index: usize, speaker: Speaker },
    #[error("invalid conversation `{session}`: {message}")]
    InvalidConversation { session: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Source of turn timestamps.
pub trait Clock: Send + Sync + fmt::Debug {
    fn now(&self) -> u64;
}

/// Milliseconds since the Unix epoch.
#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Counter starting at 1; gives reproducible timestamps.
#[derive(Debug, Default)]
pub struct LogicalClock(AtomicU64);

impl LogicalClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for LogicalClock {
    fn now(&self) -> u64 {
        self.0.fetch_add(1, Ordering::SeqCst) + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    /// Post-filter text for generated turns.
    pub text: String,
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterOutcome>,
}

/// Side B of a self-chat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partner {
    pub setup_id: String,
    pub config: SessionConfig,
    #[serde(default)]
    pub memory: MemoryState,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub session_id: String,
    pub setup_id: String,
    pub config: SessionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner: Option<Partner>,
    #[serde(default)]
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ratings: Vec<CriterionRating>,
    #[serde(default = "default_true")]
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalid_reason: Option<String>,
    /// Memory of the agent speaking as [`Speaker::Agent`].
    #[serde(default)]
    pub memory: MemoryState,
}

impl Conversation {
    pub fn new(session_id: &str, setup_id: &str, config: SessionConfig) -> Self {
        Self {
            session_id: session_id.to_string(),
            setup_id: setup_id.to_string(),
            config,
            partner: None,
            turns: Vec::new(),
            ratings: Vec::new(),
            valid: true,
            invalid_reason: None,
            memory: MemoryState::default(),
        }
    }

    pub fn task(&self) -> TaskId {
        self.config.task
    }

    /// Appends a turn. The timestamp is raised above the previous one when
    /// the clock did not advance.
    pub fn push_turn(
        &mut self,
        speaker: Speaker,
        text: impl Into<String>,
        filter: Option<FilterOutcome>,
        now: u64,
    ) -> Result<usize, StoreError> {
        let index = self.turns.len();
        let mut timestamp = now;
        if let Some(last) = self.turns.last() {
            if last.speaker == speaker {
                return Err(StoreError::Alternation { index, speaker });
            }
            timestamp = timestamp.max(last.timestamp + 1);
        }
        self.turns.push(Turn {
            speaker,
            text: text.into(),
            timestamp,
            filter,
        });
        Ok(index)
    }

    pub fn invalidate(&mut self, reason: impl Into<String>) {
        self.valid = false;
        self.invalid_reason = Some(reason.into());
    }

    /// Turns as seen by `me`: its own turns become agent turns.
    pub fn history_for(&self, me: Speaker) -> Vec<HistoryTurn> {
        self.turns
            .iter()
            .map(|t| {
                let s = if t.speaker == me {
                    Speaker::Agent
                } else {
                    Speaker::User
                };
                HistoryTurn::new(s, t.text.clone())
            })
            .collect()
    }

    /// Checks alternation, timestamp order and the session config.
    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |message: String| StoreError::InvalidConversation {
            session: self.session_id.clone(),
            message,
        };
        if self.session_id.is_empty() {
            return Err(bad("empty session id".into()));
        }
        self.config
            .validate()
            .map_err(|e| bad(format!("config: {e}")))?;
        if let Some(p) = &self.partner {
            p.config
                .validate()
                .map_err(|e| bad(format!("partner config: {e}")))?;
        }
        for (i, w) in self.turns.windows(2).enumerate() {
            if w[0].speaker == w[1].speaker {
                return Err(bad(format!(
                    "turn {} repeats speaker {}",
                    i + 1,
                    w[1].speaker
                )));
            }
            if w[1].timestamp <= w[0].timestamp {
                return Err(bad(format!("turn {} timestamp does not increase", i + 1)));
            }
        }
        Ok(())
    }
}

type Slot = Arc<Mutex<Conversation>>;

/// In-memory session table backed by one file per session.
#[derive(Debug)]
pub struct ConversationStore {
    root: Option<PathBuf>,
    clock: Arc<dyn Clock>,
    sessions: RwLock<BTreeMap<String, Slot>>,
    next_id: AtomicU64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl ConversationStore {
    /// Store that keeps everything in memory.
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self {
            root: None,
            clock,
            sessions: RwLock::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    /// Opens (creating if needed) a store rooted at `root` and reloads every
    /// session found there.
    pub fn open(root: &Path, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        let store = Self {
            root: Some(root.to_path_buf()),
            ..Self::in_memory(clock)
        };
        let imported = load_corpus_path(root, ImportMode::Strict).map_err(|e| StoreError::Io {
            path: root.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
        })?;
        for conv in imported.conversations {
            store.bump_id(&conv.session_id);
            store
                .sessions
                .write()
                .expect("store lock")
                .insert(conv.session_id.clone(), Arc::new(Mutex::new(conv)));
        }
        Ok(store)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    fn bump_id(&self, id: &str) {
        if let Some(n) = id.rsplit('-').next().and_then(|n| n.parse::<u64>().ok()) {
            self.next_id.fetch_max(n + 1, Ordering::SeqCst);
        }
    }

    fn fresh_id(&self) -> String {
        let sessions = self.sessions.read().expect("store lock");
        loop {
            let n = self.next_id.fetch_add(1, Ordering::SeqCst);
            let id = format!("s-{n:06}");
            if !sessions.contains_key(&id) {
                return id;
            }
        }
    }

    pub fn create_session(&self, config: SessionConfig) -> Result<String, StoreError> {
        let setup = config.task.as_str().to_string();
        self.create_session_for(&setup, config)
    }

    pub fn create_session_for(
        &self,
        setup_id: &str,
        config: SessionConfig,
    ) -> Result<String, StoreError> {
        config.validate()?;
        let id = self.fresh_id();
        self.insert(Conversation::new(&id, setup_id, config))?;
        Ok(id)
    }

    /// Adds a complete conversation; its id must be new.
    pub fn insert(&self, conv: Conversation) -> Result<(), StoreError> {
        conv.validate()?;
        let mut sessions = self.sessions.write().expect("store lock");
        if sessions.contains_key(&conv.session_id) {
            return Err(StoreError::DuplicateSession(conv.session_id));
        }
        self.persist(&conv)?;
        self.bump_id(&conv.session_id);
        sessions.insert(conv.session_id.clone(), Arc::new(Mutex::new(conv)));
        Ok(())
    }

    fn slot(&self, id: &str) -> Result<Slot, StoreError> {
        self.sessions
            .read()
            .expect("store lock")
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownSession(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.sessions.read().expect("store lock").contains_key(id)
    }

    pub fn append_turn(&self, id: &str, speaker: Speaker, text: &str) -> Result<usize, StoreError> {
        self.update(id, |conv, clock| {
            conv.push_turn(speaker, text, None, clock.now())
        })?
    }

    /// Runs `f` with the session locked, then persists the result. Calls on
    /// one session are serialized.
    pub fn update<R>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Conversation, &dyn Clock) -> R,
    ) -> Result<R, StoreError> {
        let slot = self.slot(id)?;
        let mut conv = slot.lock().expect("session lock");
        let out = f(&mut conv, self.clock.as_ref());
        self.persist(&conv)?;
        Ok(out)
    }

    /// Snapshot of one session.
    pub fn get(&self, id: &str) -> Result<Conversation, StoreError> {
        let slot = self.slot(id)?;
        let conv = slot.lock().expect("session lock").clone();
        Ok(conv)
    }

    /// Snapshot of every session, ordered by id.
    pub fn all(&self) -> Vec<Conversation> {
        let slots: Vec<Slot> = self
            .sessions
            .read()
            .expect("store lock")
            .values()
            .cloned()
            .collect();
        slots
            .iter()
            .map(|s| s.lock().expect("session lock").clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn export_corpus(&self, filter: &CorpusFilter) -> String {
        export_corpus(self.all().iter().filter(|c| filter.matches(c)))
    }

    fn path_of(&self, conv: &Conversation) -> Option<PathBuf> {
        self.root
            .as_ref()
            .map(|r| r.join(conv.task().as_str()).join(&conv.session_id))
    }

    fn persist(&self, conv: &Conversation) -> Result<(), StoreError> {
        let Some(path) = self.path_of(conv) else {
            return Ok(());
        };
        let dir = path.parent().expect("session path has a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(export_corpus(std::iter::once(conv)).as_bytes())
            .and_then(|_| f.sync_all())
            .map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }
}
