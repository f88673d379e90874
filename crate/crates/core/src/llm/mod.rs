//! Chat-completion client.
//!
//! [`LlmClient::complete`] checks a content-addressed response cache, then
//! sends through a [`Transport`] with bounded parallelism, request pacing and
//! exponential-backoff retries. [`HttpTransport`] speaks the chat-completion
//! JSON wire format; [`MockTransport`] replays scripted responses.

mod cache;
mod limit;
mod transport;

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::ResponseCache;
pub use limit::{Pacer, Semaphore};
pub use transport::{chat_request_body, HttpTransport, MockStats, MockTransport, Transport, TransportError};

use crate::config::{DEFAULT_MODEL, MAX_GENERATION_TOKENS, TEMPERATURE};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("empty response")]
    EmptyResponse,
    #[error("transport: {0}")]
    Transport(String),
    #[error("cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    /// Cache key over every field that can change the completion.
    pub fn cache_key(&self) -> String {
        let canonical = serde_json::to_string(&(
            &self.model,
            &self.prompt,
            self.temperature,
            self.max_tokens,
        ))
        .expect("tuple serializes");
        sha256_hex(canonical.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub cached: bool,
    pub latency_ms: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash used to key mock transcripts and recorded on rewrite records.
pub fn prompt_hash(prompt: &str) -> String {
    sha256_hex(prompt.as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub concurrency: usize,
    pub rate_per_sec: Option<f64>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            model: DEFAULT_MODEL.to_string(),
            temperature: TEMPERATURE,
            max_tokens: MAX_GENERATION_TOKENS,
            max_attempts: 5,
            backoff_base: Duration::from_secs(1),
            concurrency: 4,
            rate_per_sec: None,
        }
    }
}

pub struct LlmClient {
    config: ClientConfig,
    transport: Arc<dyn Transport>,
    cache: ResponseCache,
    slots: Semaphore,
    pacer: Option<Pacer>,
}

impl LlmClient {
    pub fn new(config: ClientConfig, transport: Arc<dyn Transport>, cache: ResponseCache) -> Self {
        let slots = Semaphore::new(config.concurrency.max(1));
        let pacer = config.rate_per_sec.map(Pacer::per_second);
        Self {
            config,
            transport,
            cache,
            slots,
            pacer,
        }
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn request(&self, prompt: impl Into<String>) -> CompletionRequest {
        CompletionRequest {
            model: self.config.model.clone(),
            prompt: prompt.into(),
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        }
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let key = request.cache_key();
        if let Some(text) = self.cache.get(&key) {
            return Ok(CompletionResponse {
                text,
                cached: true,
                latency_ms: 0.0,
            });
        }

        let max_attempts = self.config.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let (result, elapsed) = {
                let _slot = self.slots.acquire();
                if let Some(pacer) = &self.pacer {
                    pacer.wait();
                }
                let start = Instant::now();
                let result = self.transport.send(request);
                (result, start.elapsed())
            };
            match result {
                Ok(text) => {
                    if text.trim().is_empty() {
                        return Err(LlmError::EmptyResponse);
                    }
                    self.cache.insert(&key, &text)?;
                    return Ok(CompletionResponse {
                        text,
                        cached: false,
                        latency_ms: elapsed.as_secs_f64() * 1000.0,
                    });
                }
                Err(e) if e.is_retryable() && attempt < max_attempts => {
                    let delay = self.backoff(attempt - 1);
                    tracing::warn!(attempt, ?delay, error = %e, "retrying completion");
                    std::thread::sleep(delay);
                }
                Err(e) if e.is_retryable() => {
                    return Err(LlmError::RetriesExhausted {
                        attempts: attempt,
                        last: e.to_string(),
                    })
                }
                Err(TransportError::Status { status, body }) => {
                    return Err(LlmError::Status { status, body })
                }
                Err(e) => return Err(LlmError::Transport(e.to_string())),
            }
        }
    }

    /// `base * 2^k` plus up to half a base of jitter.
    fn backoff(&self, k: u32) -> Duration {
        let base = self.config.backoff_base;
        let exp = base.saturating_mul(1u32 << k.min(16));
        let jitter_ns = base.as_nanos() as u64 / 2;
        let jitter = if jitter_ns > 0 {
            Duration::from_nanos(rand::rng().random_range(0..jitter_ns))
        } else {
            Duration::ZERO
        };
        exp + jitter
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::Ordering;

    fn client(mock: Arc<MockTransport>, config: ClientConfig) -> LlmClient {
        LlmClient::new(config, mock, ResponseCache::in_memory())
    }

    fn fast() -> ClientConfig {
        ClientConfig {
            backoff_base: Duration::from_millis(1),
            ..Default::default()
        }
    }

    #[test]
    fn second_identical_request_is_cached() {
        let mock = Arc::new(MockTransport::new().with_fallback(|_| "echo".to_string()));
        let c = client(mock.clone(), fast());
        let req = c.request("hello");
        let first = c.complete(&req).unwrap();
        let second = c.complete(&req).unwrap();
        assert!(!first.cached);
        assert!(second.cached);
        assert_eq!(second.latency_ms, 0.0);
        assert_eq!(mock.stats().calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn cache_never_crosses_parameters() {
        let mock = Arc::new(MockTransport::new().with_fallback(|_| "x".to_string()));
        let c = client(mock.clone(), fast());
        let a = c.request("p");
        let mut b = a.clone();
        b.max_tokens = 10;
        let mut m = a.clone();
        m.model = "other".into();
        for r in [&a, &b, &m] {
            assert!(!c.complete(r).unwrap().cached);
        }
        assert_eq!(mock.stats().calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn scripted_response_by_prompt_hash() {
        let mock = Arc::new(MockTransport::new());
        mock.script(&prompt_hash("the prompt"), "scripted text");
        let c = client(mock, fast());
        let resp = c.complete(&c.request("the prompt")).unwrap();
        assert_eq!(resp.text, "scripted text");
    }

    #[test]
    fn unscripted_prompt_is_not_retried() {
        let mock = Arc::new(MockTransport::new());
        let c = client(mock.clone(), fast());
        assert!(matches!(c.complete(&c.request("?")), Err(LlmError::Transport(_))));
        assert_eq!(mock.stats().calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn transient_failures_retry_then_succeed() {
        let mock = Arc::new(MockTransport::new().with_fallback(|_| "ok".to_string()));
        mock.fail_next(2, TransportError::Status { status: 503, body: "busy".into() });
        let c = client(mock.clone(), fast());
        assert_eq!(c.complete(&c.request("p")).unwrap().text, "ok");
        assert_eq!(mock.stats().calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn retries_exhaust_after_limit() {
        let mock = Arc::new(MockTransport::new().with_fallback(|_| "ok".to_string()));
        mock.fail_next(10, TransportError::Timeout("slow".into()));
        let c = client(mock.clone(), fast());
        match c.complete(&c.request("p")) {
            Err(LlmError::RetriesExhausted { attempts, .. }) => assert_eq!(attempts, 5),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(mock.stats().calls.load(Ordering::SeqCst), 5);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let mock = Arc::new(MockTransport::new().with_fallback(|_| "ok".to_string()));
        mock.fail_next(1, TransportError::Status { status: 401, body: "bad key".into() });
        let c = client(mock.clone(), fast());
        match c.complete(&c.request("p")) {
            Err(LlmError::Status { status, body }) => {
                assert_eq!(status, 401);
                assert_eq!(body, "bad key");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(mock.stats().calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn empty_completion_is_an_error() {
        let mock = Arc::new(MockTransport::new().with_fallback(|_| "  \n".to_string()));
        let c = client(mock, fast());
        assert!(matches!(c.complete(&c.request("p")), Err(LlmError::EmptyResponse)));
    }

    #[test]
    fn default_request_uses_greedy_decoding_budget() {
        let c = client(Arc::new(MockTransport::new()), ClientConfig::default());
        let body = chat_request_body(&c.request("hi"));
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 2560);
        assert_eq!(body["model"], "gpt-3.5-turbo");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hi");
    }

    #[test]
    fn concurrency_limit_bounds_in_flight_requests() {
        let mock = Arc::new(
            MockTransport::new()
                .with_fallback(|p| p.to_string())
                .with_delay(Duration::from_millis(5)),
        );
        let c = client(
            mock.clone(),
            ClientConfig {
                concurrency: 2,
                ..fast()
            },
        );
        std::thread::scope(|s| {
            for i in 0..8 {
                let c = &c;
                s.spawn(move || c.complete(&c.request(format!("p{i}"))).unwrap());
            }
        });
        assert_eq!(mock.stats().calls.load(Ordering::SeqCst), 8);
        assert!(mock.stats().max_in_flight.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn rate_limit_spaces_request_starts() {
        let mock = Arc::new(MockTransport::new().with_fallback(|p| p.to_string()));
        let c = client(
            mock.clone(),
            ClientConfig {
                concurrency: 4,
                rate_per_sec: Some(50.0),
                ..fast()
            },
        );
        std::thread::scope(|s| {
            for i in 0..10 {
                let c = &c;
                s.spawn(move || c.complete(&c.request(format!("p{i}"))).unwrap());
            }
        });
        let mut starts = mock.stats().starts();
        starts.sort();
        // No window of one second may hold more than 50 starts; with 10 calls
        // that means consecutive starts are at least ~20 ms apart.
        for w in starts.windows(2) {
            assert!(w[1] - w[0] >= Duration::from_millis(19), "{:?}", w[1] - w[0]);
        }
    }
}
