//! Completion backends behind one interface, with retry.

mod fault;
mod http;
mod mock;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

pub use fault::{FaultInjector, FaultRates, INJECTED_TOO_LONG};
pub use http::HttpBackend;
pub use mock::{prompt_hash, FnBackend, MockBackend, MockScript, ScriptEntry};

use crate::Registry;

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum GatewayError {
    #[error("backend `{backend}`: {message} (retryable)")]
    Retryable { backend: String, message: String },
    #[error("backend `{backend}`: {message}")]
    Fatal { backend: String, message: String },
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("gave up after {} attempts: {}", .failures.len(), join_errors(.failures))]
    RetriesExhausted { failures: Vec<GatewayError> },
}

fn join_errors(errs: &[GatewayError]) -> String {
    errs.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Retryable { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.9,
            max_new_tokens: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub stop_markers: Vec<String>,
    pub backend_id: String,
}

impl GenerationRequest {
    pub fn new(
        prompt: impl Into<String>,
        decoding: &DecodingParams,
        stop_markers: Vec<String>,
        backend_id: impl Into<String>,
    ) -> Self {
        Self {
            prompt: prompt.into(),
            max_new_tokens: decoding.max_new_tokens,
            temperature: decoding.temperature,
            top_p: decoding.top_p,
            stop_markers,
            backend_id: backend_id.into(),
        }
    }

    /// Chat requests need at least one stop marker.
    pub fn validate(&self, chat: bool) -> Result<(), GatewayError> {
        if self.max_new_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_new_tokens must be > 0".into(),
            ));
        }
        if chat && self.stop_markers.iter().all(String::is_empty) {
            return Err(GatewayError::InvalidRequest(
                "chat requests need a stop marker".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    StopMarker,
    LengthLimit,
    BackendEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
}

impl Completion {
    pub fn stopped(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::StopMarker,
            latency_ms: 0,
        }
    }
}

/// Truncates `text` at the earliest stop marker. Returns whether one was found.
pub fn cut_at_stop_marker(text: &str, markers: &[String]) -> (String, bool) {
    let first = markers
        .iter()
        .filter(|m| !m.is_empty())
        .filter_map(|m| text.find(m.as_str()))
        .min();
    match first {
        Some(i) => (text[..i].to_string(), true),
        None => (text.to_string(), false),
    }
}

/// A text-in/text-out completion endpoint.
pub trait Backend: Send + Sync + fmt::Debug {
    fn complete(&self, request: &GenerationRequest) -> Result<Completion, GatewayError>;

    /// Maximum number of in-flight requests.
    fn parallelism(&self) -> usize {
        1
    }
}

/// Outcome of [`complete_with_retry`].
#[derive(Debug, Clone, PartialEq)]
pub struct Attempted {
    pub completion: Completion,
    pub attempts: usize,
    /// Failures of the attempts before the successful one.
    pub failures: Vec<GatewayError>,
}

/// At most `1 + max_retries` attempts; only retryable failures are retried.
pub fn complete_with_retry(
    backend: &dyn Backend,
    request: &GenerationRequest,
    max_retries: usize,
) -> Result<Attempted, GatewayError> {
    let mut failures = Vec::new();
    for attempt in 1..=max_retries + 1 {
        match backend.complete(request) {
            Ok(completion) => {
                return Ok(Attempted {
                    completion,
                    attempts: attempt,
                    failures,
                })
            }
            Err(e) => {
                let retry = e.is_retryable();
                log::debug!("attempt {attempt} failed: {e}");
                failures.push(e);
                if !retry {
                    break;
                }
            }
        }
    }
    Err(GatewayError::RetriesExhausted { failures })
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().expect("permit lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("permit lock");
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permit lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Backend registry with a per-backend parallelism limit.
#[derive(Clone)]
pub struct Gateway {
    backends: Registry<dyn Backend>,
    permits: HashMap<String, Arc<Permits>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backends", &self.backends)
            .finish()
    }
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new()
    }
}

impl Gateway {
    pub fn new() -> Self {
        Self {
            backends: Registry::new("backend"),
            permits: HashMap::new(),
        }
    }

    pub fn register(&mut self, id: impl Into<String>, backend: Arc<dyn Backend>) {
        let id = id.into();
        self.permits
            .insert(id.clone(), Arc::new(Permits::new(backend.parallelism())));
        self.backends.register(id, backend);
    }

    pub fn backend(&self, id: &str) -> Result<Arc<dyn Backend>, GatewayError> {
        self.backends
            .get(id)
            .map_err(|_| GatewayError::UnknownBackend(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.backends.contains(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.backends.names()
    }

    pub fn is_empty(&self) -> bool {
        self.backends.is_empty()
    }

    pub fn complete(&self, request: &GenerationRequest) -> Result<Completion, GatewayError> {
        let backend = self.backend(&request.backend_id)?;
        let _permit = self.permits.get(&request.backend_id).map(|p| p.acquire());
        backend.complete(request)
    }

    pub fn complete_with_retry(
        &self,
        request: &GenerationRequest,
        max_retries: usize,
    ) -> Result<Attempted, GatewayError> {
        complete_with_retry(self, request, max_retries)
    }
}

impl Backend for Gateway {
    fn complete(&self, request: &GenerationRequest) -> Result<Completion, GatewayError> {
        Gateway::complete(self, request)
    }
}

/// Backend entry of a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Mock {
        /// Script file; `.json` for prompt-hash maps, anything else for an
        /// ordered text script.
        script: String,
        #[serde(default = "default_true")]
        cycle: bool,
    },
    Http {
        endpoint: String,
        model: String,
        /// Name of the environment variable holding the bearer token.
        #[serde(default)]
        auth_token_env: Option<String>,
        #[serde(default = "default_parallelism")]
        parallelism: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_true() -> bool {
    true
}

fn default_parallelism() -> usize {
    4
}

fn default_timeout() -> u64 {
    120
}

impl BackendSpec {
    /// Builds the backend; relative script paths resolve against `base_dir`.
    pub fn build(&self, id: &str, base_dir: &Path) -> Result<Arc<dyn Backend>, GatewayError> {
        match self {
            BackendSpec::Mock { script, cycle } => {
                let path = base_dir.join(script);
                let script = MockScript::load(&path).map_err(|e| GatewayError::Fatal {
                    backend: id.to_string(),
                    message: format!("loading {}: {e}", path.display()),
                })?;
                Ok(Arc::new(MockBackend::new(id, script).cycling(*cycle)))
            }
            BackendSpec::Http {
                endpoint,
                model,
                auth_token_env,
                parallelism,
                timeout_secs,
            } => {
                let token = auth_token_env
                    .as_deref()
                    .and_then(|var| std::env::var(var).ok());
                Ok(Arc::new(HttpBackend::new(
                    id,
                    endpoint,
                    model,
                    token,
                    *parallelism,
                    std::time::Duration::from_secs(*timeout_secs),
                )?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn req(max: usize) -> GenerationRequest {
        GenerationRequest::new(
            "prompt",
            &DecodingParams {
                max_new_tokens: max,
                ..Default::default()
            },
            vec!["</s>".into()],
            "mock",
        )
    }

    #[test]
    fn stop_marker_cut() {
        let m = vec!["</s>".to_string(), "\nUSER:".to_string()];
        assert_eq!(
            cut_at_stop_marker("Oui.\nUSER: non</s>", &m),
            ("Oui.".to_string(), true)
        );
        assert_eq!(cut_at_stop_marker("Oui.", &m), ("Oui.".to_string(), false));
    }

    #[test]
    fn request_validation() {
        assert!(req(0).validate(false).is_err());
        let mut r = req(5);
        assert!(r.validate(true).is_ok());
        r.stop_markers.clear();
        assert!(r.validate(true).is_err());
        assert!(r.validate(false).is_ok());
    }

    #[test]
    fn retry_succeeds_on_second_attempt() {
        let b = MockBackend::new(
            "mock",
            MockScript::Ordered(vec![
                ScriptEntry::Fail {
                    retryable: true,
                    message: "timeout".into(),
                },
                ScriptEntry::Text("Bonjour!".into()),
            ]),
        );
        let out = complete_with_retry(&b, &req(10), 1).unwrap();
        assert_eq!(out.attempts, 2);
        assert_eq!(out.completion.text, "Bonjour!");
        assert_eq!(out.failures.len(), 1);
    }

    #[test]
    fn no_retries_fails_after_one_attempt() {
        let calls = AtomicUsize::new(0);
        let b = FnBackend::new(|_| {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(GatewayError::Retryable {
                backend: "f".into(),
                message: "down".into(),
            })
        });
        match complete_with_retry(&b, &req(10), 0) {
            Err(GatewayError::RetriesExhausted { failures }) => assert_eq!(failures.len(), 1),
            other => panic!("{other:?}"),
        }
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn exhausted_retries_carry_every_failure() {
        let b = FnBackend::new(|_| {
            Err(GatewayError::Retryable {
                backend: "f".into(),
                message: "down".into(),
            })
        });
        match complete_with_retry(&b, &req(10), 3) {
            Err(GatewayError::RetriesExhausted { failures }) => assert_eq!(failures.len(), 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let calls = AtomicUsize::new(0);
        let b = FnBackend::new(|_| {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(GatewayError::Fatal {
                backend: "f".into(),
                message: "bad json".into(),
            })
        });
        assert!(complete_with_retry(&b, &req(10), 5).is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn deterministic_success_single_attempt() {
        let b = MockBackend::new("mock", MockScript::ordered(["Salut."]));
        let out = complete_with_retry(&b, &req(10), 3).unwrap();
        assert_eq!(out.attempts, 1);
    }

    #[test]
    fn gateway_routes_by_id() {
        let mut g = Gateway::new();
        g.register(
            "mock",
            Arc::new(MockBackend::new("mock", MockScript::ordered(["A."]))),
        );
        assert_eq!(g.complete(&req(5)).unwrap().text, "A.");
        let mut r = req(5);
        r.backend_id = "nope".into();
        assert_eq!(
            g.complete(&r).unwrap_err(),
            GatewayError::UnknownBackend("nope".into())
        );
    }

    #[test]
    fn parallelism_limit_is_respected() {
        use std::sync::atomic::AtomicUsize;
        #[derive(Debug)]
        struct Slow {
            live: AtomicUsize,
            peak: AtomicUsize,
        }
        impl Backend for Slow {
            fn complete(&self, _: &GenerationRequest) -> Result<Completion, GatewayError> {
                let now = self.live.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(std::time::Duration::from_millis(20));
                self.live.fetch_sub(1, Ordering::SeqCst);
                Ok(Completion::stopped("ok"))
            }
            fn parallelism(&self) -> usize {
                2
            }
        }
        let slow = Arc::new(Slow {
            live: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let mut g = Gateway::new();
        g.register("mock", slow.clone());
        std::thread::scope(|s| {
            for _ in 0..6 {
                s.spawn(|| g.complete(&req(5)).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
    }
}
