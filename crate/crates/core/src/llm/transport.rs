use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::{json, Value};

use super::{prompt_hash, CompletionRequest};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("timeout: {0}")]
    Timeout(String),
    #[error("network: {0}")]
    Network(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("no scripted response for prompt hash {0}")]
    Unscripted(String),
}

impl TransportError {
    /// Timeouts, 429 and 5xx.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Timeout(_) => true,
            TransportError::Status { status, .. } => *status == 429 || (500..600).contains(status),
            _ => false,
        }
    }
}

pub trait Transport: Send + Sync {
    /// Returns the completion text.
    fn send(&self, request: &CompletionRequest) -> Result<String, TransportError>;
}

pub fn chat_request_body(request: &CompletionRequest) -> Value {
    json!({
        "model": request.model,
        "messages": [{"role": "user", "content": request.prompt}],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    })
}

/// Reads the first choice's message content.
pub fn parse_chat_response(body: &str) -> Result<String, TransportError> {
    let v: Value = serde_json::from_str(body).map_err(|e| TransportError::Malformed(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| TransportError::Malformed("missing choices[0].message.content".into()))
}

pub struct HttpTransport {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            api_key,
            agent,
        }
    }

    /// Reads the API key from the named environment variable.
    pub fn from_env(endpoint: impl Into<String>, key_var: &str, timeout: Duration) -> Self {
        Self::new(endpoint, std::env::var(key_var).ok(), timeout)
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(chat_request_body(request)).map_err(|e| match e {
            ureq::Error::Timeout(t) => TransportError::Timeout(t.to_string()),
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => {
                TransportError::Timeout(io.to_string())
            }
            other => TransportError::Network(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(t) => TransportError::Timeout(t.to_string()),
            other => TransportError::Network(other.to_string()),
        })?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Status { status, body });
        }
        parse_chat_response(&body)
    }
}

/// Instrumentation shared by a [`MockTransport`] and its observers.
#[derive(Default)]
pub struct MockStats {
    pub calls: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    starts: Mutex<Vec<Instant>>,
}

impl MockStats {
    pub fn starts(&self) -> Vec<Instant> {
        self.starts.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

type Fallback = Box<dyn Fn(&str) -> String + Send + Sync>;

#[derive(Deserialize)]
struct TranscriptLine {
    prompt_hash: String,
    response_text: String,
}

/// Scripted backend: responses keyed by prompt hash, with optional delay,
/// fallback generator and injected failures.
pub struct MockTransport {
    script: RwLock<HashMap<String, String>>,
    fallback: Option<Fallback>,
    delay: Duration,
    failures: Mutex<VecDeque<TransportError>>,
    stats: MockStats,
}

impl Default for MockTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl MockTransport {
    pub fn new() -> Self {
        Self {
            script: RwLock::new(HashMap::new()),
            fallback: None,
            delay: Duration::ZERO,
            failures: Mutex::new(VecDeque::new()),
            stats: MockStats::default(),
        }
    }

    /// Loads a JSONL transcript of `{prompt_hash, response_text}` lines.
    pub fn from_transcript(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mock = Self::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptLine = serde_json::from_str(&line)
                .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
            mock.script(&entry.prompt_hash, &entry.response_text);
        }
        Ok(mock)
    }

    pub fn with_fallback(mut self, f: impl Fn(&str) -> String + Send + Sync + 'static) -> Self {
        self.fallback = Some(Box::new(f));
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn script(&self, prompt_hash: &str, response: &str) {
        self.script
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(prompt_hash.to_string(), response.to_string());
    }

    pub fn script_prompt(&self, prompt: &str, response: &str) {
        self.script(&prompt_hash(prompt), response);
    }

    /// The next `n` calls fail with `error`.
    pub fn fail_next(&self, n: usize, error: TransportError) {
        let mut q = self.failures.lock().unwrap_or_else(|e| e.into_inner());
        q.extend(std::iter::repeat_n(error, n));
    }

    pub fn stats(&self) -> &MockStats {
        &self.stats
    }
}

impl Transport for MockTransport {
    fn send(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        let stats = &self.stats;
        stats.calls.fetch_add(1, Ordering::SeqCst);
        stats
            .starts
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(Instant::now());
        let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        stats.max_in_flight.fetch_max(now, Ordering::SeqCst);

        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let injected = self.failures.lock().unwrap_or_else(|e| e.into_inner()).pop_front();
        let result = match injected {
            Some(err) => Err(err),
            None => {
                let hash = prompt_hash(&request.prompt);
                let scripted = self
                    .script
                    .read()
                    .unwrap_or_else(|e| e.into_inner())
                    .get(&hash)
                    .cloned();
                match (scripted, &self.fallback) {
                    (Some(text), _) => Ok(text),
                    (None, Some(f)) => Ok(f(&request.prompt)),
                    (None, None) => Err(TransportError::Unscripted(hash)),
                }
            }
        };
        stats.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}
