//! OpenAI-compatible `/v1/completions` client.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    cut_at_stop_marker, Backend, Completion, FinishReason, GatewayError, GenerationRequest,
};

#[derive(Debug)]
pub struct HttpBackend {
    id: String,
    url: String,
    model: String,
    token: Option<String>,
    parallelism: usize,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    top_p: f64,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    stop: &'a [String],
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

impl HttpBackend {
    pub fn new(
        id: &str,
        endpoint: &str,
        model: &str,
        token: Option<String>,
        parallelism: usize,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Fatal {
                backend: id.to_string(),
                message: e.to_string(),
            })?;
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/completions") {
            base.to_string()
        } else {
            format!("{base}/v1/completions")
        };
        Ok(Self {
            id: id.to_string(),
            url,
            model: model.to_string(),
            token,
            parallelism: parallelism.max(1),
            client,
        })
    }

    fn retryable(&self, message: String) -> GatewayError {
        GatewayError::Retryable {
            backend: self.id.clone(),
            message,
        }
    }

    fn fatal(&self, message: String) -> GatewayError {
        GatewayError::Fatal {
            backend: self.id.clone(),
            message,
        }
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &GenerationRequest) -> Result<Completion, GatewayError> {
        let started = Instant::now();
        let body = CompletionBody {
            model: &self.model,
            prompt: &request.prompt,
            max_tokens: request.max_new_tokens,
            temperature: request.temperature,
            top_p: request.top_p,
            stop: &request.stop_markers,
        };
        let mut call = self.client.post(&self.url).json(&body);
        if let Some(t) = &self.token {
            call = call.bearer_auth(t);
        }
        let resp = call.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                self.retryable(e.to_string())
            } else {
                self.fatal(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(self.retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(self.fatal(format!("HTTP {status}: {text}")));
        }
        let parsed: CompletionResponse = resp
            .json()
            .map_err(|e| self.fatal(format!("malformed response: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| self.fatal("response has no choices".into()))?;
        let (text, cut) = cut_at_stop_marker(&choice.text, &request.stop_markers);
        let finish_reason = match choice.finish_reason.as_deref() {
            _ if cut => FinishReason::StopMarker,
            Some("length") => FinishReason::LengthLimit,
            Some("stop") => FinishReason::StopMarker,
            _ => FinishReason::BackendEnd,
        };
        Ok(Completion {
            text,
            finish_reason,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }

    fn parallelism(&self) -> usize {
        self.parallelism
    }
}
