//! Deterministic scripted backends.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{
    cut_at_stop_marker, Backend, Completion, FinishReason, GatewayError, GenerationRequest,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptEntry {
    Text(String),
    Fail { retryable: bool, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockScript {
    /// Responses consumed in order.
    Ordered(Vec<ScriptEntry>),
    /// Responses keyed by [`prompt_hash`] of the prompt.
    ByPrompt {
        responses: HashMap<String, ScriptEntry>,
        fallback: Option<ScriptEntry>,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonScript {
    Ordered(Vec<String>),
    ByPrompt {
        by_prompt: HashMap<String, String>,
        #[serde(default)]
        fallback: Option<String>,
    },
}

/// Hex SHA-256 of a prompt, the key of prompt-map scripts.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

fn unescape(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

impl MockScript {
    pub fn ordered<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        MockScript::Ordered(
            responses
                .into_iter()
                .map(|s| ScriptEntry::Text(s.into()))
                .collect(),
        )
    }

    /// Text script: one response per line; `\n` stands for a line break,
    /// `!retryable msg` and `!fatal msg` script failures, an empty line an
    /// empty response.
    pub fn parse_text(src: &str) -> Self {
        let entries = src
            .lines()
            .map(|line| {
                if let Some(msg) = line.strip_prefix("!retryable") {
                    ScriptEntry::Fail {
                        retryable: true,
                        message: msg.trim().to_string(),
                    }
                } else if let Some(msg) = line.strip_prefix("!fatal") {
                    ScriptEntry::Fail {
                        retryable: false,
                        message: msg.trim().to_string(),
                    }
                } else {
                    ScriptEntry::Text(unescape(line))
                }
            })
            .collect();
        MockScript::Ordered(entries)
    }

    /// JSON script: an array of responses, or
    /// `{"by_prompt": {"<sha256>": "..."}, "fallback": "..."}`.
    pub fn parse_json(src: &str) -> Result<Self, serde_json::Error> {
        Ok(match serde_json::from_str::<JsonScript>(src)? {
            JsonScript::Ordered(v) => MockScript::ordered(v),
            JsonScript::ByPrompt {
                by_prompt,
                fallback,
            } => MockScript::ByPrompt {
                responses: by_prompt
                    .into_iter()
                    .map(|(k, v)| (k, ScriptEntry::Text(v)))
                    .collect(),
                fallback: fallback.map(ScriptEntry::Text),
            },
        })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let src = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::parse_json(&src).map_err(|e| e.to_string())
        } else {
            Ok(Self::parse_text(&src))
        }
    }
}

/// Replays a [`MockScript`]. Script consumption is serialized, so a fixed
/// script and call order give identical output.
pub struct MockBackend {
    id: String,
    script: MockScript,
    cycle: bool,
    cursor: Mutex<usize>,
    prompts: Mutex<Vec<String>>,
}

impl fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MockBackend")
            .field("id", &self.id)
            .field("cycle", &self.cycle)
            .finish_non_exhaustive()
    }
}

impl MockBackend {
    pub fn new(id: impl Into<String>, script: MockScript) -> Self {
        Self {
            id: id.into(),
            script,
            cycle: false,
            cursor: Mutex::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    /// Wrap around when an ordered script runs out.
    pub fn cycling(mut self, cycle: bool) -> Self {
        self.cycle = cycle;
        self
    }

    /// Prompts received so far.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("mock lock").clone()
    }

    pub fn calls(&self) -> usize {
        self.prompts.lock().expect("mock lock").len()
    }

    fn next_entry(&self, prompt: &str) -> Result<ScriptEntry, GatewayError> {
        self.prompts
            .lock()
            .expect("mock lock")
            .push(prompt.to_string());
        match &self.script {
            MockScript::Ordered(entries) => {
                let mut cur = self.cursor.lock().expect("mock lock");
                if entries.is_empty() || (*cur >= entries.len() && !self.cycle) {
                    return Err(GatewayError::Fatal {
                        backend: self.id.clone(),
                        message: "mock script exhausted".into(),
                    });
                }
                let entry = entries[*cur % entries.len()].clone();
                *cur += 1;
                Ok(entry)
            }
            MockScript::ByPrompt {
                responses,
                fallback,
            } => responses
                .get(&prompt_hash(prompt))
                .or(fallback.as_ref())
                .cloned()
                .ok_or_else(|| GatewayError::Fatal {
                    backend: self.id.clone(),
                    message: format!("no scripted response for prompt {}", prompt_hash(prompt)),
                }),
        }
    }
}

/// Simulates generation of `text`: halts at the first stop marker, or after
/// `max_new_tokens` whitespace-separated words. A text that runs out on its
/// own ends as if the end-of-message marker had been produced.
pub fn simulate_generation(text: &str, request: &GenerationRequest) -> Completion {
    let (text, _) = cut_at_stop_marker(text, &request.stop_markers);
    let mut words = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_word = false;
        } else if !in_word {
            in_word = true;
            words += 1;
            if words > request.max_new_tokens {
                return Completion {
                    text: text[..i].trim_end().to_string(),
                    finish_reason: FinishReason::LengthLimit,
                    latency_ms: 0,
                };
            }
        }
    }
    Completion::stopped(text)
}

impl Backend for MockBackend {
    fn complete(&self, request: &GenerationRequest) -> Result<Completion, GatewayError> {
        match self.next_entry(&request.prompt)? {
            ScriptEntry::Text(t) => Ok(simulate_generation(&t, request)),
            ScriptEntry::Fail { retryable, message } => Err(if retryable {
                GatewayError::Retryable {
                    backend: self.id.clone(),
                    message,
                }
            } else {
                GatewayError::Fatal {
                    backend: self.id.clone(),
                    message,
                }
            }),
        }
    }
}

/// Backend defined by a closure.
pub struct FnBackend<F> {
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&GenerationRequest) -> Result<Completion, GatewayError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> fmt::Debug for FnBackend<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnBackend")
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&GenerationRequest) -> Result<Completion, GatewayError> + Send + Sync,
{
    fn complete(&self, request: &GenerationRequest) -> Result<Completion, GatewayError> {
        (self.f)(request)
    }
}
