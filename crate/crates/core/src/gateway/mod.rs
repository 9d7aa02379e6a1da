//! Chat-completion gateway: pluggable backends, response caching, retry
//! handling, and character-based usage accounting.
//!
//! Everything the pipeline says to a model goes through [`Gateway::complete`],
//! which is safe to call from many threads at once.

mod cache;
mod http;
mod mock;

pub use cache::DiskCache;
pub use http::HttpBackend;
pub use mock::{MockBackend, MockMatcher, MockRule, MockScript};

use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable naming the chat-completions endpoint URL.
pub const ENDPOINT_ENV: &str = "FASTSLOW_ENDPOINT";
/// Environment variable holding the bearer token for the endpoint.
pub const API_KEY_ENV: &str = "FASTSLOW_API_KEY";

pub const DEFAULT_MAX_TOKENS: u32 = 2048;
pub const DEFAULT_CACHE_DIR: &str = ".fastslow-cache";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    HttpChat,
    Mock,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::HttpChat => "http-chat",
            BackendKind::Mock => "mock",
        })
    }
}

/// Sampling temperature used when the config does not pin one. The three
/// backbone families ran at different temperatures; anything unrecognized
/// gets the GPT-style default.
pub fn default_temperature(model_name: &str) -> f64 {
    let name = model_name.to_lowercase();
    if name.contains("llama") {
        0.6
    } else if name.contains("gemini") {
        0.9
    } else {
        0.7
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backend: BackendKind,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl ModelConfig {
    pub fn new(backend: BackendKind, model_name: impl Into<String>) -> Self {
        let model_name = model_name.into();
        let temperature = default_temperature(&model_name);
        ModelConfig {
            backend,
            model_name,
            temperature,
            max_tokens: DEFAULT_MAX_TOKENS,
            request_seed: None,
            endpoint: None,
        }
    }

    /// Copy with a specific request seed, used to tell repeated samples of
    /// the same prompt apart (and give them distinct cache keys).
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.request_seed = Some(seed);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub user: String,
    pub config: ModelConfig,
}

impl ChatRequest {
    pub fn new(user: impl Into<String>, config: ModelConfig) -> Self {
        ChatRequest {
            system: None,
            user: user.into(),
            config,
        }
    }
}

/// Character-denominated usage counters. `calls` counts only requests that
/// actually reached a backend; cache hits land in `cache_hits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UsageRecord {
    pub calls: u64,
    pub prompt_chars: u64,
    pub completion_chars: u64,
    #[serde(default)]
    pub cache_hits: u64,
}

impl UsageRecord {
    pub fn add(&mut self, other: &UsageRecord) {
        self.calls += other.calls;
        self.prompt_chars += other.prompt_chars;
        self.completion_chars += other.completion_chars;
        self.cache_hits += other.cache_hits;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: UsageRecord,
    pub cached: bool,
}

/// Stable content digest identifying a request for the on-disk cache.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(pub String);

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Digest over everything that determines a response: backend, model,
/// sampling knobs, seed, and both prompt parts. Field contents are
/// length-prefixed so adjacent fields cannot collide.
pub fn cache_key(req: &ChatRequest) -> CacheKey {
    let mut hasher = Sha256::new();
    let mut field = |bytes: &[u8]| {
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    };
    field(req.config.backend.to_string().as_bytes());
    field(req.config.model_name.as_bytes());
    field(&req.config.temperature.to_bits().to_le_bytes());
    field(&req.config.max_tokens.to_le_bytes());
    match req.config.request_seed {
        Some(seed) => field(&seed.to_le_bytes()),
        None => field(b"-"),
    }
    field(req.system.as_deref().unwrap_or("").as_bytes());
    field(req.user.as_bytes());
    CacheKey(crate::prompt::hex_string(&hasher.finalize()))
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("empty user prompt")]
    EmptyPrompt,
    #[error("temperature {0} outside [0, 2]")]
    InvalidTemperature(f64),
    #[error("max_tokens must be positive")]
    InvalidMaxTokens,
    #[error("unscripted prompt reached mock backend: {snippet:?}")]
    Unscripted { snippet: String },
    #[error("endpoint returned HTTP {status}: {detail}")]
    Http { status: u16, detail: String },
    #[error("transport failure talking to endpoint: {0}")]
    Transport(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("endpoint response not understood: {0}")]
    MalformedResponse(String),
    #[error("no endpoint configured: set {ENDPOINT_ENV} or the model endpoint field")]
    MissingEndpoint,
    #[error("response cache I/O failure at {path}: {message}")]
    Cache { path: String, message: String },
    #[error("invalid mock script: {0}")]
    BadScript(String),
}

impl GatewayError {
    /// Only transient transport-class failures are worth retrying; semantic
    /// 4xx rejections never are.
    pub fn retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_) | GatewayError::Timeout(_) => true,
            GatewayError::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// Anything that can answer a chat request. Implementations return the raw
/// completion text; the gateway handles caching, retries, and accounting.
pub trait Backend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError>;
    fn kind(&self) -> BackendKind;
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay_ms: 250,
            max_delay_ms: 4000,
        }
    }
}

impl RetryPolicy {
    fn delay_ms(&self, attempt: u32) -> u64 {
        let exp = self.base_delay_ms.saturating_mul(1u64 << attempt.min(16));
        exp.min(self.max_delay_ms)
    }
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    cache: Option<DiskCache>,
    retry: RetryPolicy,
    usage: Mutex<UsageRecord>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, cache: Option<DiskCache>, retry: RetryPolicy) -> Self {
        Gateway {
            backend,
            cache,
            retry,
            usage: Mutex::new(UsageRecord::default()),
        }
    }

    /// Mock gateway with caching off — scripts are already deterministic.
    pub fn mock(script: MockScript) -> Self {
        Gateway::new(Arc::new(MockBackend::new(script)), None, RetryPolicy::default())
    }

    /// HTTP gateway with the response cache on, rooted at `cache_dir`.
    pub fn http(config: &ModelConfig, cache_dir: &Path) -> Result<Self, GatewayError> {
        let backend = HttpBackend::from_config(config)?;
        let cache = DiskCache::open(cache_dir)?;
        Ok(Gateway::new(Arc::new(backend), Some(cache), RetryPolicy::default()))
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    /// Totals accumulated since construction.
    pub fn usage(&self) -> UsageRecord {
        *self.usage.lock().expect("usage lock poisoned")
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        validate(req)?;
        let key = cache_key(req);
        if let Some(cache) = &self.cache {
            if let Some(text) = cache.get(&key) {
                let usage = UsageRecord {
                    cache_hits: 1,
                    ..UsageRecord::default()
                };
                self.usage.lock().expect("usage lock poisoned").add(&usage);
                return Ok(ChatResponse {
                    text,
                    usage,
                    cached: true,
                });
            }
        }
        let text = self.call_with_retries(req)?;
        let usage = UsageRecord {
            calls: 1,
            prompt_chars: (req.system.as_deref().unwrap_or("").chars().count()
                + req.user.chars().count()) as u64,
            completion_chars: text.chars().count() as u64,
            cache_hits: 0,
        };
        self.usage.lock().expect("usage lock poisoned").add(&usage);
        if let Some(cache) = &self.cache {
            cache.put(&key, &text)?;
        }
        Ok(ChatResponse {
            text,
            usage,
            cached: false,
        })
    }

    fn call_with_retries(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let mut attempt = 0;
        loop {
            match self.backend.complete(req) {
                Ok(text) => return Ok(text),
                Err(e) if e.retryable() && attempt < self.retry.max_retries => {
                    std::thread::sleep(std::time::Duration::from_millis(
                        self.retry.delay_ms(attempt),
                    ));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn validate(req: &ChatRequest) -> Result<(), GatewayError> {
    if req.user.trim().is_empty() {
        return Err(GatewayError::EmptyPrompt);
    }
    if !(0.0..=2.0).contains(&req.config.temperature) || req.config.temperature.is_nan() {
        return Err(GatewayError::InvalidTemperature(req.config.temperature));
    }
    if req.config.max_tokens == 0 {
        return Err(GatewayError::InvalidMaxTokens);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn mock_config() -> ModelConfig {
        ModelConfig::new(BackendKind::Mock, "gpt-3.5-turbo")
    }

    #[test]
    fn temperature_defaults_track_backbone_families() {
        assert_eq!(default_temperature("gpt-3.5-turbo"), 0.7);
        assert_eq!(default_temperature("Llama-3.1-8B-Instruct"), 0.6);
        assert_eq!(default_temperature("gemini-pro"), 0.9);
        assert_eq!(default_temperature("somebody-else"), 0.7);
    }

    #[test]
    fn cache_key_is_stable_and_field_sensitive() {
        let req = ChatRequest::new("What is 2 + 2?", mock_config());
        assert_eq!(cache_key(&req), cache_key(&req.clone()));

        let mut seeded = req.clone();
        seeded.config.request_seed = Some(7);
        assert_ne!(cache_key(&req), cache_key(&seeded));

        let mut warm = req.clone();
        warm.config.temperature = 0.9;
        assert_ne!(cache_key(&req), cache_key(&warm));

        let mut sys = req.clone();
        sys.system = Some("be brief".into());
        assert_ne!(cache_key(&req), cache_key(&sys));
    }

    #[test]
    fn rejects_invalid_requests() {
        let gw = Gateway::mock(MockScript::with_default("hi"));
        let empty = ChatRequest::new("   ", mock_config());
        assert!(matches!(gw.complete(&empty), Err(GatewayError::EmptyPrompt)));

        let mut bad_temp = ChatRequest::new("q", mock_config());
        bad_temp.config.temperature = 2.5;
        assert!(matches!(
            gw.complete(&bad_temp),
            Err(GatewayError::InvalidTemperature(_))
        ));

        let mut bad_max = ChatRequest::new("q", mock_config());
        bad_max.config.max_tokens = 0;
        assert!(matches!(
            gw.complete(&bad_max),
            Err(GatewayError::InvalidMaxTokens)
        ));
    }

    #[test]
    fn usage_accumulates_per_call() {
        let gw = Gateway::mock(MockScript::with_default("four"));
        gw.complete(&ChatRequest::new("2 + 2?", mock_config())).unwrap();
        gw.complete(&ChatRequest::new("3 + 3?", mock_config())).unwrap();
        let u = gw.usage();
        assert_eq!(u.calls, 2);
        assert_eq!(u.prompt_chars, 12);
        assert_eq!(u.completion_chars, 8);
        assert_eq!(u.cache_hits, 0);
    }

    struct FlakyBackend {
        fail_times: u32,
        seen: AtomicU32,
        error: fn() -> GatewayError,
    }

    impl Backend for FlakyBackend {
        fn complete(&self, _req: &ChatRequest) -> Result<String, GatewayError> {
            let n = self.seen.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_times {
                Err((self.error)())
            } else {
                Ok("ok".into())
            }
        }
        fn kind(&self) -> BackendKind {
            BackendKind::HttpChat
        }
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_retries: 3,
            base_delay_ms: 1,
            max_delay_ms: 2,
        }
    }

    #[test]
    fn transient_errors_are_retried_up_to_the_limit() {
        let backend = Arc::new(FlakyBackend {
            fail_times: 3,
            seen: AtomicU32::new(0),
            error: || GatewayError::Transport("connection reset".into()),
        });
        let gw = Gateway::new(backend.clone(), None, fast_retry());
        let resp = gw.complete(&ChatRequest::new("q", mock_config())).unwrap();
        assert_eq!(resp.text, "ok");
        assert_eq!(backend.seen.load(Ordering::SeqCst), 4);
        assert_eq!(gw.usage().calls, 1);

        let exhausted = Arc::new(FlakyBackend {
            fail_times: 10,
            seen: AtomicU32::new(0),
            error: || GatewayError::Http { status: 503, detail: "overloaded".into() },
        });
        let gw = Gateway::new(exhausted.clone(), None, fast_retry());
        assert!(gw.complete(&ChatRequest::new("q", mock_config())).is_err());
        assert_eq!(exhausted.seen.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn semantic_rejections_are_never_retried() {
        let backend = Arc::new(FlakyBackend {
            fail_times: 10,
            seen: AtomicU32::new(0),
            error: || GatewayError::Http { status: 400, detail: "bad request".into() },
        });
        let gw = Gateway::new(backend.clone(), None, fast_retry());
        assert!(gw.complete(&ChatRequest::new("q", mock_config())).is_err());
        assert_eq!(backend.seen.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn cache_round_trip_counts_hits_not_calls() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::open(dir.path()).unwrap();
        let gw = Gateway::new(
            Arc::new(MockBackend::new(MockScript::with_default("four"))),
            Some(cache),
            RetryPolicy::default(),
        );
        let req = ChatRequest::new("2 + 2?", mock_config());
        let first = gw.complete(&req).unwrap();
        assert!(!first.cached);
        let second = gw.complete(&req).unwrap();
        assert!(second.cached);
        assert_eq!(second.text, "four");
        let u = gw.usage();
        assert_eq!(u.calls, 1);
        assert_eq!(u.cache_hits, 1);

        let other = ChatRequest::new("2 + 2?", mock_config().with_seed(9));
        assert!(!gw.complete(&other).unwrap().cached);
    }

    #[test]
    fn cache_survives_gateway_restart() {
        let dir = tempfile::tempdir().unwrap();
        let req = ChatRequest::new("2 + 2?", mock_config());
        {
            let gw = Gateway::new(
                Arc::new(MockBackend::new(MockScript::with_default("four"))),
                Some(DiskCache::open(dir.path()).unwrap()),
                RetryPolicy::default(),
            );
            gw.complete(&req).unwrap();
        }
        let gw = Gateway::new(
            Arc::new(MockBackend::new(MockScript::with_default("DIFFERENT"))),
            Some(DiskCache::open(dir.path()).unwrap()),
            RetryPolicy::default(),
        );
        let resp = gw.complete(&req).unwrap();
        assert!(resp.cached);
        assert_eq!(resp.text, "four");
        assert_eq!(gw.usage().calls, 0);
    }
}
