//! Uniform completion interface over remote chat endpoints and simulated
//! responders, with bounded in-flight requests and retry.

pub mod http;
pub mod mock;
pub mod prompt;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{ContextSetting, OptionOrder};
pub use mock::{MetapromptBehavior, MockConfig, Strategy, TableCell};
pub use prompt::{build_metaprompt, build_prompt, Dialect, QuestionKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status} after {attempts} attempt(s): {body_snippet}")]
    Http {
        status: u16,
        body_snippet: String,
        attempts: u32,
    },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("precondition: {0}")]
    Precondition(String),
}

impl BackendError {
    fn retryable(&self) -> bool {
        match self {
            BackendError::Transport { .. } => true,
            BackendError::Http { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            _ => false,
        }
    }

    fn with_attempts(self, n: u32) -> Self {
        match self {
            BackendError::Transport { message, .. } => BackendError::Transport {
                attempts: n,
                message,
            },
            BackendError::Http {
                status,
                body_snippet,
                ..
            } => BackendError::Http {
                status,
                body_snippet,
                attempts: n,
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub top_k: u32,
    /// Only consulted by simulated backends.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            max_new_tokens: 6,
            top_k: 40,
            seed: None,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature >= 0.0) {
            return Err(BackendError::Config("temperature must be >= 0".into()));
        }
        if self.max_new_tokens == 0 || self.top_k == 0 {
            return Err(BackendError::Config(
                "max_new_tokens and top_k must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

/// Side information about the trial behind a request. Never sent over the
/// wire; simulated backends use it to key their randomness and tables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialMeta {
    pub trial_id: String,
    pub template_id: String,
    pub setting: Option<ContextSetting>,
    pub order: Option<OptionOrder>,
    pub target_noun: String,
    pub other_noun: String,
    pub question: Option<QuestionKind>,
    pub correct_answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub params: GenerationParams,
    pub meta: Option<TrialMeta>,
}

impl ChatRequest {
    pub fn with_meta(mut self, meta: TrialMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn user_text(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    pub fn has_assistant_prefix(&self) -> bool {
        self.messages.last().map(|m| m.role) == Some(Role::Assistant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat,
    MockScripted,
    MockStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_backoff_ms: 250,
            timeout_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub max_in_flight: usize,
    pub dialect: Dialect,
    pub retry: RetryPolicy,
    pub params: GenerationParams,
    pub mock: MockConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::MockStrategy,
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model_name: "mock".into(),
            api_key_env: None,
            max_in_flight: 8,
            dialect: Dialect::default(),
            retry: RetryPolicy::default(),
            params: GenerationParams::default(),
            mock: MockConfig::default(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_in_flight == 0 {
            return Err(BackendError::Config("max_in_flight must be >= 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(BackendError::Config("retry.max_attempts must be >= 1".into()));
        }
        self.params.validate()?;
        match self.kind {
            BackendKind::HttpChat if self.endpoint.is_empty() => {
                Err(BackendError::Config("http_chat needs an endpoint".into()))
            }
            BackendKind::MockStrategy => self.mock.strategy.validate(),
            BackendKind::MockScripted if self.mock.script.is_empty() => {
                Err(BackendError::Config("mock_scripted needs a non-empty script".into()))
            }
            _ => self.mock.validate_rates(),
        }
    }

    /// Stable description of the backend recorded with each measurement.
    pub fn fingerprint(&self) -> String {
        match self.kind {
            BackendKind::HttpChat => format!("http_chat:{}@{}", self.model_name, self.endpoint),
            BackendKind::MockScripted => format!("mock_scripted:{}", self.model_name),
            BackendKind::MockStrategy => {
                format!("mock_strategy:{}:{}", self.model_name, self.mock.strategy.name())
            }
        }
    }
}

/// Something that turns one chat request into response text.
pub trait Completer: Send + Sync {
    fn complete_once(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

/// Counting semaphore that also records the peak number of holders.
#[derive(Debug)]
pub struct InFlightLimiter {
    limit: usize,
    current: Mutex<usize>,
    freed: Condvar,
    peak: AtomicUsize,
}

pub struct Permit<'a>(&'a InFlightLimiter);

impl InFlightLimiter {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut cur = self.current.lock().expect("limiter poisoned");
        while *cur >= self.limit {
            cur = self.freed.wait(cur).expect("limiter poisoned");
        }
        *cur += 1;
        self.peak.fetch_max(*cur, Ordering::SeqCst);
        Permit(self)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut cur = self.0.current.lock().expect("limiter poisoned");
        *cur -= 1;
        self.0.freed.notify_one();
    }
}

/// Throttled, retrying front door to a configured backend.
pub struct Gateway {
    config: BackendConfig,
    inner: Box<dyn Completer>,
    limiter: InFlightLimiter,
    jitter_seed: AtomicUsize,
}

impl Gateway {
    pub fn from_config(config: &BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let inner: Box<dyn Completer> = match config.kind {
            BackendKind::HttpChat => Box::new(http::HttpChat::new(config)?),
            BackendKind::MockScripted => Box::new(mock::ScriptedMock::new(config)),
            BackendKind::MockStrategy => Box::new(mock::StrategyMock::new(config)?),
        };
        Ok(Self::with_completer(config.clone(), inner))
    }

    pub fn with_completer(config: BackendConfig, inner: Box<dyn Completer>) -> Self {
        let limit = config.max_in_flight;
        Self {
            config,
            inner,
            limiter: InFlightLimiter::new(limit),
            jitter_seed: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn max_in_flight(&self) -> usize {
        self.config.max_in_flight
    }

    pub fn peak_in_flight(&self) -> usize {
        self.limiter.peak()
    }

    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    /// Complete one request, retrying transient failures with jittered
    /// exponential backoff. Client errors (other than 408/429) are final.
    pub fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let policy = &self.config.retry;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.limiter.acquire();
                self.inner.complete_once(request)
            };
            match result {
                Ok(text) => return Ok(text),
                Err(e) if e.retryable() && attempt < policy.max_attempts => {
                    std::thread::sleep(self.backoff(attempt));
                }
                Err(e) => return Err(e.with_attempts(attempt)),
            }
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.config.retry.base_backoff_ms as f64 * 2f64.powi(attempt as i32 - 1);
        let n = self.jitter_seed.fetch_add(1, Ordering::Relaxed);
        // jitter only affects timing, never sampled responses
        let jitter: f64 = crate::seed::rng(n as u64).random_range(0.5..1.0);
        Duration::from_micros((base * jitter * 1000.0) as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;
    use std::sync::Arc;

    struct Flaky {
        fail_first: u32,
        calls: AtomicU32,
        error: BackendError,
    }

    impl Completer for Flaky {
        fn complete_once(&self, _: &ChatRequest) -> Result<String, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Err(self.error.clone())
            } else {
                Ok("{'BLANK': 'she'}".into())
            }
        }
    }

    fn fast_config() -> BackendConfig {
        BackendConfig {
            retry: RetryPolicy {
                max_attempts: 3,
                base_backoff_ms: 1,
                timeout_ms: 1000,
            },
            ..BackendConfig::default()
        }
    }

    fn request() -> ChatRequest {
        build_prompt("BLANK ran.", ("he", "she"), Dialect::default(), GenerationParams::default())
            .unwrap()
    }

    #[test]
    fn defaults_match_fixed_generation_parameters() {
        let p = GenerationParams::default();
        assert_eq!((p.temperature, p.max_new_tokens, p.top_k), (0.5, 6, 40));
    }

    #[test]
    fn transient_errors_are_retried() {
        let flaky = Flaky {
            fail_first: 2,
            calls: AtomicU32::new(0),
            error: BackendError::Transport {
                attempts: 1,
                message: "reset".into(),
            },
        };
        let gw = Gateway::with_completer(fast_config(), Box::new(flaky));
        assert_eq!(gw.complete(&request()).unwrap(), "{'BLANK': 'she'}");
    }

    #[test]
    fn exhausted_retries_report_attempts() {
        let flaky = Flaky {
            fail_first: 10,
            calls: AtomicU32::new(0),
            error: BackendError::Http {
                status: 503,
                body_snippet: "busy".into(),
                attempts: 1,
            },
        };
        let gw = Gateway::with_completer(fast_config(), Box::new(flaky));
        match gw.complete(&request()) {
            Err(BackendError::Http {
                status, attempts, ..
            }) => assert_eq!((status, attempts), (503, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn client_errors_are_not_retried() {
        let calls = Arc::new(AtomicU32::new(0));
        struct Count(Arc<AtomicU32>);
        impl Completer for Count {
            fn complete_once(&self, _: &ChatRequest) -> Result<String, BackendError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Err(BackendError::Http {
                    status: 401,
                    body_snippet: "unauthorized".into(),
                    attempts: 1,
                })
            }
        }
        let gw = Gateway::with_completer(fast_config(), Box::new(Count(calls.clone())));
        assert!(gw.complete(&request()).is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn limiter_bounds_concurrency() {
        struct Slow;
        impl Completer for Slow {
            fn complete_once(&self, _: &ChatRequest) -> Result<String, BackendError> {
                std::thread::sleep(Duration::from_millis(2));
                Ok(String::new())
            }
        }
        let cfg = BackendConfig {
            max_in_flight: 3,
            ..fast_config()
        };
        let gw = Gateway::with_completer(cfg, Box::new(Slow));
        let req = request();
        std::thread::scope(|s| {
            for _ in 0..12 {
                s.spawn(|| {
                    for _ in 0..5 {
                        gw.complete(&req).unwrap();
                    }
                });
            }
        });
        assert!(gw.peak_in_flight() <= 3);
        assert!(gw.peak_in_flight() >= 1);
    }

    #[test]
    fn zero_in_flight_is_a_config_error() {
        let cfg = BackendConfig {
            max_in_flight: 0,
            ..BackendConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(BackendError::Config(_))));
    }
}
