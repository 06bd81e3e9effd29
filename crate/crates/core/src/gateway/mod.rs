//! Uniform chat-completion access to model servers, with an on-disk
//! content-addressed cache, bounded concurrency and a deterministic mock.

mod cache;
mod http;
mod mock;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheEntry, DiskCache};
pub use http::HttpChatBackend;
pub use mock::{extract_document, mock_structured_reply, MockBackend, DOCUMENT_CLOSE, DOCUMENT_OPEN};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("invalid backend config `{backend}`: {message}")]
    Config { backend: String, message: String },
    #[error("transport error on `{backend}` after {attempts} attempt(s) (last status {status:?}): {message}")]
    Transport {
        backend: String,
        status: Option<u16>,
        attempts: u32,
        message: String,
    },
    #[error("protocol error on `{backend}`: {message}")]
    Protocol { backend: String, message: String },
    #[error("cache error at {path}: {message}")]
    Cache { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    HttpChat,
    Mock,
}

fn default_temperature() -> f64 {
    0.0
}
fn default_max_output_tokens() -> u32 {
    2048
}
fn default_timeout_s() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_concurrency() -> usize {
    4
}
fn default_chat_path() -> String {
    "/chat/completions".to_string()
}

/// One model endpoint. The same struct is read from the `[backends.<name>]`
/// sections of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(rename = "model")]
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Base delay of the exponential backoff between retries.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Maximum in-flight requests to this backend.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_chat_path")]
    pub chat_path: String,
    /// Header carrying the API key. `Authorization` sends `Bearer <key>`,
    /// any other header name sends the raw key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_header: Option<String>,
    /// Mock only: varies the deterministic replies.
    #[serde(default)]
    pub seed: u64,
}

impl BackendConfig {
    pub fn mock(model_name: &str, seed: u64) -> Self {
        Self {
            kind: BackendKind::Mock,
            base_url: None,
            model_name: model_name.to_string(),
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
            timeout_s: default_timeout_s(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
            concurrency: default_concurrency(),
            chat_path: default_chat_path(),
            auth_header: None,
            seed,
        }
    }

    pub fn http(model_name: &str, base_url: &str) -> Self {
        Self {
            kind: BackendKind::HttpChat,
            base_url: Some(base_url.to_string()),
            ..Self::mock(model_name, 0)
        }
    }

    pub fn is_live(&self) -> bool {
        self.kind == BackendKind::HttpChat
    }

    pub fn validate(&self, name: &str) -> Result<(), GatewayError> {
        let fail = |message: &str| {
            Err(GatewayError::Config {
                backend: name.to_string(),
                message: message.to_string(),
            })
        };
        match (self.kind, &self.base_url) {
            (BackendKind::HttpChat, None) => return fail("base_url is required for http-chat"),
            (BackendKind::Mock, Some(_)) => return fail("base_url is only valid for http-chat"),
            _ => {}
        }
        if self.model_name.trim().is_empty() {
            return fail("model must be non-empty");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return fail("temperature must be a finite value >= 0");
        }
        if self.concurrency == 0 {
            return fail("concurrency must be at least 1");
        }
        Ok(())
    }

    /// Environment variable holding the API key for backend `name`.
    pub fn api_key_var(name: &str) -> String {
        let suffix: String = name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() {
                    c.to_ascii_uppercase()
                } else {
                    '_'
                }
            })
            .collect();
        format!("DBB_API_KEY_{suffix}")
    }
}

/// What shape of reply a request expects. Live servers ignore this; the mock
/// uses it to produce replies that exercise downstream parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "schema")]
pub enum ReplySchema {
    FreeText,
    /// Six-heading summary of the whole document, spoken by `speaker`.
    StructuredSummary { speaker: String },
    /// Six-heading extraction of what the document attributes to `speaker`.
    StructuredExtraction { speaker: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub schema: ReplySchema,
    /// Free-form label used by counters and the audit log (e.g. `rec`).
    pub stage: String,
    pub request_hash: String,
}

impl CompletionRequest {
    pub fn new(
        backend: &BackendConfig,
        stage: &str,
        system_prompt: impl Into<String>,
        user_prompt: impl Into<String>,
        schema: ReplySchema,
    ) -> Self {
        let system_prompt = system_prompt.into();
        let user_prompt = user_prompt.into();
        let request_hash = request_hash(
            &backend.model_name,
            &system_prompt,
            &user_prompt,
            backend.temperature,
        );
        Self {
            system_prompt,
            user_prompt,
            schema,
            stage: stage.to_string(),
            request_hash,
        }
    }
}

/// SHA-256 over model name, temperature and both prompts, hex encoded.
pub fn request_hash(model_name: &str, system: &str, user: &str, temperature: f64) -> String {
    let mut h = Sha256::new();
    for part in [model_name.as_bytes(), &temperature.to_bits().to_le_bytes(), system.as_bytes(), user.as_bytes()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub backend: String,
    pub cached: bool,
    pub latency: Duration,
    /// Retries needed before the successful attempt.
    pub retries: u32,
}

/// A chat endpoint. Implementations return the raw model text.
pub trait ChatBackend: Send + Sync {
    fn chat(&self, name: &str, request: &CompletionRequest) -> Result<ChatReply, GatewayError>;
}

#[derive(Debug, Clone)]
pub struct ChatReply {
    pub text: String,
    pub retries: u32,
    pub attempts: u32,
}

#[derive(Debug, Default)]
pub struct Counters {
    requests: AtomicU64,
    live: AtomicU64,
    cache_hits: AtomicU64,
    attempts: AtomicU64,
    retries: AtomicU64,
    failures: AtomicU64,
    by_stage: Mutex<BTreeMap<String, u64>>,
}

/// Point-in-time copy of a backend's counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CounterSnapshot {
    /// Every call to `complete`, cached or not.
    pub requests: u64,
    /// Calls that reached the backend.
    pub live: u64,
    pub cache_hits: u64,
    pub attempts: u64,
    pub retries: u64,
    pub failures: u64,
    pub by_stage: BTreeMap<String, u64>,
}

impl Counters {
    fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            requests: self.requests.load(Ordering::SeqCst),
            live: self.live.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            attempts: self.attempts.load(Ordering::SeqCst),
            retries: self.retries.load(Ordering::SeqCst),
            failures: self.failures.load(Ordering::SeqCst),
            by_stage: self.by_stage.lock().unwrap().clone(),
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

struct Slot {
    config: BackendConfig,
    client: Box<dyn ChatBackend>,
    limiter: Semaphore,
    counters: Counters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub backend: String,
    pub stage: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub cached: bool,
}

/// Registry of named backends sharing one cache.
pub struct Gateway {
    slots: BTreeMap<String, Slot>,
    cache: Option<DiskCache>,
    audit: Option<Mutex<Vec<AuditEntry>>>,
    inflight: Mutex<HashSet<(String, String)>>,
    inflight_cv: Condvar,
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new(None)
    }
}

impl Gateway {
    pub fn new(cache_dir: Option<PathBuf>) -> Self {
        Self {
            slots: BTreeMap::new(),
            cache: cache_dir.map(DiskCache::new),
            audit: None,
            inflight: Mutex::new(HashSet::new()),
            inflight_cv: Condvar::new(),
        }
    }

    /// Records every prompt passed to `complete`.
    pub fn with_audit(mut self) -> Self {
        self.audit = Some(Mutex::new(Vec::new()));
        self
    }

    /// Registers a backend built from its config (mock or http-chat).
    pub fn add_backend(&mut self, name: &str, config: BackendConfig) -> Result<(), GatewayError> {
        config.validate(name)?;
        let client: Box<dyn ChatBackend> = match config.kind {
            BackendKind::Mock => Box::new(MockBackend::new(config.seed)),
            BackendKind::HttpChat => {
                let key = std::env::var(BackendConfig::api_key_var(name)).ok();
                Box::new(HttpChatBackend::new(&config, key)?)
            }
        };
        self.add_custom_backend(name, config, client)
    }

    /// Registers a backend with a caller-supplied client.
    pub fn add_custom_backend(
        &mut self,
        name: &str,
        config: BackendConfig,
        client: Box<dyn ChatBackend>,
    ) -> Result<(), GatewayError> {
        config.validate(name)?;
        let limiter = Semaphore::new(config.concurrency);
        self.slots.insert(
            name.to_string(),
            Slot {
                config,
                client,
                limiter,
                counters: Counters::default(),
            },
        );
        Ok(())
    }

    pub fn config(&self, backend: &str) -> Result<&BackendConfig, GatewayError> {
        self.slot(backend).map(|s| &s.config)
    }

    pub fn backend_names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    fn slot(&self, backend: &str) -> Result<&Slot, GatewayError> {
        self.slots
            .get(backend)
            .ok_or_else(|| GatewayError::UnknownBackend(backend.to_string()))
    }

    pub fn counters(&self, backend: &str) -> Result<CounterSnapshot, GatewayError> {
        Ok(self.slot(backend)?.counters.snapshot())
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.audit
            .as_ref()
            .map(|a| a.lock().unwrap().clone())
            .unwrap_or_default()
    }

    /// Builds a request for `backend` (the hash depends on its model and temperature).
    pub fn request(
        &self,
        backend: &str,
        stage: &str,
        system_prompt: impl Into<String>,
        user_prompt: impl Into<String>,
        schema: ReplySchema,
    ) -> Result<CompletionRequest, GatewayError> {
        let config = self.config(backend)?;
        Ok(CompletionRequest::new(config, stage, system_prompt, user_prompt, schema))
    }

    pub fn complete(
        &self,
        backend: &str,
        request: &CompletionRequest,
    ) -> Result<CompletionResult, GatewayError> {
        let slot = self.slot(backend)?;
        let started = Instant::now();
        slot.counters.requests.fetch_add(1, Ordering::SeqCst);
        *slot
            .counters
            .by_stage
            .lock()
            .unwrap()
            .entry(request.stage.clone())
            .or_default() += 1;

        // Single flight per (backend, hash): concurrent duplicates wait for the first.
        let key = (backend.to_string(), request.request_hash.clone());
        {
            let mut inflight = self.inflight.lock().unwrap();
            while inflight.contains(&key) {
                inflight = self.inflight_cv.wait(inflight).unwrap();
            }
            inflight.insert(key.clone());
        }
        let outcome = self.complete_exclusive(backend, slot, request, started);
        self.inflight.lock().unwrap().remove(&key);
        self.inflight_cv.notify_all();

        if let Some(audit) = &self.audit {
            audit.lock().unwrap().push(AuditEntry {
                backend: backend.to_string(),
                stage: request.stage.clone(),
                system_prompt: request.system_prompt.clone(),
                user_prompt: request.user_prompt.clone(),
                cached: outcome.as_ref().map(|r| r.cached).unwrap_or(false),
            });
        }
        outcome
    }

    fn complete_exclusive(
        &self,
        backend: &str,
        slot: &Slot,
        request: &CompletionRequest,
        started: Instant,
    ) -> Result<CompletionResult, GatewayError> {
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(backend, &request.request_hash)? {
                slot.counters.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(CompletionResult {
                    text: entry.response,
                    backend: backend.to_string(),
                    cached: true,
                    latency: started.elapsed(),
                    retries: 0,
                });
            }
        }

        slot.counters.live.fetch_add(1, Ordering::SeqCst);
        let reply = {
            let _permit = slot.limiter.acquire();
            slot.client.chat(backend, request)
        };
        let reply = match reply {
            Ok(r) => r,
            Err(e) => {
                slot.counters.failures.fetch_add(1, Ordering::SeqCst);
                if let GatewayError::Transport { attempts, .. } = &e {
                    slot.counters
                        .attempts
                        .fetch_add(u64::from(*attempts), Ordering::SeqCst);
                    slot.counters
                        .retries
                        .fetch_add(u64::from(attempts.saturating_sub(1)), Ordering::SeqCst);
                }
                return Err(e);
            }
        };
        slot.counters
            .attempts
            .fetch_add(u64::from(reply.attempts), Ordering::SeqCst);
        slot.counters
            .retries
            .fetch_add(u64::from(reply.retries), Ordering::SeqCst);

        if reply.text.trim().is_empty() {
            slot.counters.failures.fetch_add(1, Ordering::SeqCst);
            return Err(GatewayError::Protocol {
                backend: backend.to_string(),
                message: "model returned an empty reply".into(),
            });
        }

        if let Some(cache) = &self.cache {
            cache.put(
                backend,
                &CacheEntry::new(&slot.config, request, reply.text.clone()),
            )?;
        }
        Ok(CompletionResult {
            text: reply.text,
            backend: backend.to_string(),
            cached: false,
            latency: started.elapsed(),
            retries: reply.retries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    struct Scripted {
        replies: Mutex<Vec<String>>,
    }

    impl ChatBackend for Scripted {
        fn chat(&self, _: &str, _: &CompletionRequest) -> Result<ChatReply, GatewayError> {
            let text = self.replies.lock().unwrap().remove(0);
            Ok(ChatReply {
                text,
                retries: 0,
                attempts: 1,
            })
        }
    }

    #[test]
    fn hash_is_pure_and_sensitive() {
        let a = request_hash("m", "s", "u", 0.0);
        assert_eq!(a, request_hash("m", "s", "u", 0.0));
        assert_ne!(a, request_hash("m2", "s", "u", 0.0));
        assert_ne!(a, request_hash("m", "s", "u", 0.5));
        assert_ne!(a, request_hash("m", "su", "", 0.0));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn second_identical_request_is_cached() {
        let dir = tempfile::tempdir().unwrap();
        let mut gw = Gateway::new(Some(dir.path().to_path_buf()));
        gw.add_backend("m", BackendConfig::mock("mock-1", 7)).unwrap();
        let req = gw
            .request("m", "t", "sys", "hello", ReplySchema::FreeText)
            .unwrap();
        let first = gw.complete("m", &req).unwrap();
        let second = gw.complete("m", &req).unwrap();
        assert!(!first.cached);
        assert!(second.cached);
        assert_eq!(first.text, second.text);
        let c = gw.counters("m").unwrap();
        assert_eq!((c.requests, c.live, c.cache_hits), (2, 1, 1));

        let shard = &req.request_hash[..2];
        let file = dir.path().join("m").join(shard).join(format!("{}.json", req.request_hash));
        assert!(file.is_file());
    }

    #[test]
    fn empty_reply_is_protocol_error_and_not_cached() {
        let dir = tempfile::tempdir().unwrap();
        let mut gw = Gateway::new(Some(dir.path().to_path_buf()));
        let client = Scripted {
            replies: Mutex::new(vec!["  ".into(), "ok".into()]),
        };
        gw.add_custom_backend("s", BackendConfig::mock("x", 0), Box::new(client))
            .unwrap();
        let req = gw.request("s", "t", "", "q", ReplySchema::FreeText).unwrap();
        assert!(matches!(gw.complete("s", &req), Err(GatewayError::Protocol { .. })));
        let ok = gw.complete("s", &req).unwrap();
        assert_eq!(ok.text, "ok");
        assert!(!ok.cached);
    }

    #[test]
    fn config_validation() {
        let mut c = BackendConfig::mock("m", 0);
        assert!(c.validate("a").is_ok());
        c.base_url = Some("http://x".into());
        assert!(c.validate("a").is_err());
        let mut h = BackendConfig::http("m", "http://localhost:1");
        assert!(h.validate("h").is_ok());
        h.base_url = None;
        assert!(h.validate("h").is_err());
        assert_eq!(BackendConfig::api_key_var("open-ai"), "DBB_API_KEY_OPEN_AI");
    }

    #[test]
    fn concurrent_duplicates_issue_one_live_call() {
        let dir = tempfile::tempdir().unwrap();
        let mut gw = Gateway::new(Some(dir.path().to_path_buf()));
        gw.add_backend("m", BackendConfig::mock("mock", 1)).unwrap();
        let gw = Arc::new(gw);
        let req = gw.request("m", "t", "s", "same", ReplySchema::FreeText).unwrap();
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let gw = Arc::clone(&gw);
                let req = req.clone();
                std::thread::spawn(move || gw.complete("m", &req).unwrap().text)
            })
            .collect();
        let texts: Vec<String> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(texts.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(gw.counters("m").unwrap().live, 1);
    }
}
