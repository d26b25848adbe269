//! Client layer over chat-completion and embedding backends.
//!
//! [`Gateway`] wraps a backend with a content-addressed response cache,
//! bounded retries with exponential backoff, an in-flight limit and an
//! optional JSON Lines call recorder. Backends are plain traits so tests can
//! swap in [`ScriptedBackend`], [`FnBackend`] or a [`ReplayBackend`].

mod cache;
mod embed;
mod http;
mod mock;
mod replay;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::ResponseCache;
pub use embed::{HashEmbedder, QuestionEmbedding};
pub use http::{HttpBackend, HttpConfig};
pub use mock::{FnBackend, ScriptedBackend};
pub use replay::{Recorder, ReplayBackend};

use crate::text::sha256_hex;

/// Default sampling temperature for every stage.
pub const DEFAULT_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Completion,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub kind: RequestKind,
    pub model: String,
    pub prompt: String,
    pub params: DecodeParams,
}

impl ModelRequest {
    pub fn completion(model: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            kind: RequestKind::Completion,
            model: model.into(),
            prompt: prompt.into(),
            params: DecodeParams::default(),
        }
    }

    pub fn embedding(model: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            kind: RequestKind::Embedding,
            model: model.into(),
            prompt: text.into(),
            params: DecodeParams::default(),
        }
    }

    pub fn with_params(mut self, params: DecodeParams) -> Self {
        self.params = params;
        self
    }

    pub fn key(&self) -> CacheKey {
        CacheKey::of(self)
    }
}

/// Model id plus decode parameters for one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageModel {
    pub model: String,
    pub params: DecodeParams,
}

impl StageModel {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            params: DecodeParams::default(),
        }
    }

    pub fn request(&self, prompt: impl Into<String>) -> ModelRequest {
        ModelRequest::completion(self.model.clone(), prompt).with_params(self.params)
    }
}

/// SHA-256 over the canonical JSON encoding of a request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn of(req: &ModelRequest) -> Self {
        // Field order of ModelRequest is fixed, so serde_json output is canonical.
        let encoded = serde_json::to_vec(req).expect("request encoding is infallible");
        Self(sha256_hex(encoded))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Outcome of one logical call as stored in a recording.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallOutcome {
    Ok(String),
    Refusal(String),
    Failed(String),
}

/// One line of a recording file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallRecord {
    pub key: CacheKey,
    pub request: ModelRequest,
    pub outcome: CallOutcome,
    pub latency_ms: u64,
    pub retries: u32,
    pub timestamp_ms: u64,
    pub cache_hit: bool,
}

/// Errors a backend reports for a single attempt.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Retryable: connection failures, timeouts, 5xx, rate limits.
    #[error("transport: {0}")]
    Transport(String),
    #[error("{0}")]
    Refusal(String),
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("no recorded response for key {0}")]
    ReplayMiss(String),
    /// A failure captured in a recording, reproduced verbatim.
    #[error("{0}")]
    Replayed(String),
    #[error("scripted backend has no responses left")]
    Exhausted,
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("model refused: {0}")]
    Refusal(String),
    #[error("replay miss for key {0}")]
    ReplayMiss(String),
    #[error("{0}")]
    Replayed(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("embedding dimension drift: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    fn from_backend(err: BackendError, attempts: u32) -> Self {
        match err {
            BackendError::Transport(message) => GatewayError::Transport { attempts, message },
            BackendError::Refusal(m) => GatewayError::Refusal(m),
            BackendError::ReplayMiss(k) => GatewayError::ReplayMiss(k),
            BackendError::Replayed(m) => GatewayError::Replayed(m),
            other => GatewayError::Backend(other.to_string()),
        }
    }

    fn to_outcome(&self) -> CallOutcome {
        match self {
            GatewayError::Refusal(m) => CallOutcome::Refusal(m.clone()),
            other => CallOutcome::Failed(other.to_string()),
        }
    }
}

/// A successful backend reply. `prior_retries` lets a replayed response
/// report the retries spent when it was originally recorded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub text: String,
    pub prior_retries: u32,
}

impl From<String> for Reply {
    fn from(text: String) -> Self {
        Reply {
            text,
            prior_retries: 0,
        }
    }
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> Result<Reply, BackendError>;
}

pub trait EmbeddingBackend: Send + Sync {
    /// Embeds a batch; output is index-aligned with `texts`.
    fn embed_batch(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;

    /// Local backends are deterministic and free, so the gateway skips the
    /// cache and the recorder for them.
    fn is_local(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    /// Wall-clock budget per logical call, backoff sleeps included.
    pub budget: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            budget: Duration::from_secs(120),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
            budget: Duration::from_secs(3600),
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << attempt.min(16))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub retries: u32,
    pub cache_hit: bool,
    pub key: CacheKey,
}

struct InFlight {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.current.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.current.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Thread-safe client used by every pipeline stage.
pub struct Gateway {
    completion: Arc<dyn CompletionBackend>,
    embedding: Option<Arc<dyn EmbeddingBackend>>,
    cache: Option<ResponseCache>,
    recorder: Option<Recorder>,
    policy: RetryPolicy,
    in_flight: InFlight,
    embed_batch_size: usize,
    backend_calls: AtomicUsize,
}

impl Gateway {
    pub fn new(completion: Arc<dyn CompletionBackend>) -> Self {
        Self {
            completion,
            embedding: None,
            cache: None,
            recorder: None,
            policy: RetryPolicy::default(),
            in_flight: InFlight::new(8),
            embed_batch_size: 64,
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn EmbeddingBackend>) -> Self {
        self.embedding = Some(embedder);
        self
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_recorder(mut self, recorder: Recorder) -> Self {
        self.recorder = Some(recorder);
        self
    }

    pub fn with_retry(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_in_flight_limit(mut self, max: usize) -> Self {
        self.in_flight = InFlight::new(max);
        self
    }

    pub fn with_embed_batch_size(mut self, size: usize) -> Self {
        self.embed_batch_size = size.max(1);
        self
    }

    /// Number of backend invocations so far (cache hits excluded, retries
    /// included).
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn complete(&self, request: &ModelRequest) -> Result<Completion, GatewayError> {
        self.complete_inner(request, true)
    }

    /// Like [`complete`](Self::complete) but skips the cache lookup. Used
    /// when re-asking after an unusable answer.
    pub fn complete_fresh(&self, request: &ModelRequest) -> Result<Completion, GatewayError> {
        self.complete_inner(request, false)
    }

    fn complete_inner(&self, request: &ModelRequest, use_cache: bool) -> Result<Completion, GatewayError> {
        if request.prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt".into()));
        }
        let key = request.key();
        let started = Instant::now();

        if use_cache {
            if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key, &request.model)) {
                self.record(&key, request, CallOutcome::Ok(hit.response.clone()), started, hit.retries, true);
                return Ok(Completion {
                    text: hit.response,
                    retries: hit.retries,
                    cache_hit: true,
                    key,
                });
            }
        }

        let result = {
            let _permit = self.in_flight.acquire();
            self.with_retries(started, || self.completion.complete(request))
        };
        match result {
            Ok((reply, retries)) => {
                let retries = retries + reply.prior_retries;
                if let Some(cache) = &self.cache {
                    if let Err(e) = cache.put(&key, request, &reply.text, retries) {
                        log::warn!("cache write failed for {key}: {e}");
                    }
                }
                self.record(&key, request, CallOutcome::Ok(reply.text.clone()), started, retries, false);
                Ok(Completion {
                    text: reply.text,
                    retries,
                    cache_hit: false,
                    key,
                })
            }
            Err((err, retries)) => {
                self.record(&key, request, err.to_outcome(), started, retries, false);
                Err(err)
            }
        }
    }

    fn with_retries<T>(
        &self,
        started: Instant,
        mut attempt_fn: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<(T, u32), (GatewayError, u32)> {
        let mut retries = 0u32;
        loop {
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            match attempt_fn() {
                Ok(v) => return Ok((v, retries)),
                Err(BackendError::Transport(msg)) if retries < self.policy.max_retries => {
                    let delay = self.policy.delay(retries);
                    if started.elapsed() + delay > self.policy.budget {
                        return Err((
                            GatewayError::Transport {
                                attempts: retries + 1,
                                message: format!("{msg} (retry budget exhausted)"),
                            },
                            retries,
                        ));
                    }
                    log::debug!("transport error, retrying in {delay:?}: {msg}");
                    std::thread::sleep(delay);
                    retries += 1;
                }
                Err(e) => return Err((GatewayError::from_backend(e, retries + 1), retries)),
            }
        }
    }

    fn record(
        &self,
        key: &CacheKey,
        request: &ModelRequest,
        outcome: CallOutcome,
        started: Instant,
        retries: u32,
        cache_hit: bool,
    ) {
        let Some(recorder) = &self.recorder else {
            return;
        };
        let record = CallRecord {
            key: key.clone(),
            request: request.clone(),
            outcome,
            latency_ms: started.elapsed().as_millis() as u64,
            retries,
            timestamp_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            cache_hit,
        };
        if let Err(e) = recorder.append(&record) {
            log::warn!("failed to append call record: {e}");
        }
    }

    /// Embeds `texts` in order. Remote backends are cached and recorded per
    /// text; local backends are called directly.
    pub fn embed(&self, texts: &[String], model: &str) -> Result<Vec<QuestionEmbedding>, GatewayError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest(format!("empty text at position {i}")));
        }
        let backend = self
            .embedding
            .as_ref()
            .ok_or_else(|| GatewayError::InvalidRequest("no embedding backend configured".into()))?;

        let mut vectors: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        let requests: Vec<ModelRequest> =
            texts.iter().map(|t| ModelRequest::embedding(model, t.clone())).collect();
        let local = backend.is_local();

        if !local {
            if let Some(cache) = &self.cache {
                for (i, req) in requests.iter().enumerate() {
                    let key = req.key();
                    if let Some(hit) = cache.get(&key, model) {
                        if let Ok(v) = serde_json::from_str::<Vec<f64>>(&hit.response) {
                            self.record(&key, req, CallOutcome::Ok(hit.response), Instant::now(), 0, true);
                            vectors[i] = Some(v);
                        }
                    }
                }
            }
        }

        let missing: Vec<usize> = (0..texts.len()).filter(|&i| vectors[i].is_none()).collect();
        for chunk in missing.chunks(self.embed_batch_size) {
            let batch: Vec<String> = chunk.iter().map(|&i| texts[i].clone()).collect();
            let started = Instant::now();
            let result = {
                let _permit = self.in_flight.acquire();
                self.with_retries(started, || backend.embed_batch(model, &batch))
            };
            let (out, retries) = match result {
                Ok(v) => v,
                Err((err, retries)) => {
                    if !local {
                        for &i in chunk {
                            self.record(&requests[i].key(), &requests[i], err.to_outcome(), started, retries, false);
                        }
                    }
                    return Err(err);
                }
            };
            if out.len() != chunk.len() {
                return Err(GatewayError::Backend(format!(
                    "embedding backend returned {} vectors for {} texts",
                    out.len(),
                    chunk.len()
                )));
            }
            for (&i, v) in chunk.iter().zip(out) {
                if !local {
                    let encoded = serde_json::to_string(&v).expect("vector encoding is infallible");
                    let key = requests[i].key();
                    if let Some(cache) = &self.cache {
                        if let Err(e) = cache.put(&key, &requests[i], &encoded, retries) {
                            log::warn!("cache write failed for {key}: {e}");
                        }
                    }
                    self.record(&key, &requests[i], CallOutcome::Ok(encoded), started, retries, false);
                }
                vectors[i] = Some(v);
            }
        }

        let vectors: Vec<Vec<f64>> = vectors.into_iter().map(|v| v.expect("every slot filled")).collect();
        let dim = vectors[0].len();
        let mut out = Vec::with_capacity(vectors.len());
        for v in vectors {
            if v.len() != dim {
                return Err(GatewayError::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            out.push(QuestionEmbedding::new(v));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prompt: &str) -> ModelRequest {
        ModelRequest::completion("m", prompt)
    }

    #[test]
    fn cache_key_is_stable_and_sensitive() {
        assert_eq!(req("a").key(), req("a").key());
        assert_ne!(req("a").key(), req("b").key());
        let hot = req("a").with_params(DecodeParams {
            temperature: 0.5,
            max_tokens: 1024,
        });
        assert_ne!(req("a").key(), hot.key());
        assert_ne!(req("a").key(), ModelRequest::embedding("m", "a").key());
        assert_eq!(req("a").key().as_str().len(), 64);
    }

    #[test]
    fn scripted_queue_is_served_in_order() {
        let backend = Arc::new(ScriptedBackend::new(["r1", "r2"]));
        let gw = Gateway::new(backend.clone());
        assert_eq!(gw.complete(&req("x")).unwrap().text, "r1");
        assert_eq!(gw.complete(&req("y")).unwrap().text, "r2");
        assert_eq!(backend.prompts(), ["x", "y"]);
    }

    #[test]
    fn second_identical_request_hits_cache() {
        let dir = tempfile::tempdir().unwrap();
        let backend = Arc::new(ScriptedBackend::new(["first", "second"]));
        let gw = Gateway::new(backend.clone()).with_cache(ResponseCache::new(dir.path()));
        let a = gw.complete(&req("same")).unwrap();
        let b = gw.complete(&req("same")).unwrap();
        assert!(!a.cache_hit);
        assert!(b.cache_hit);
        assert_eq!(a.text, b.text);
        assert_eq!(backend.prompts().len(), 1);
    }

    #[test]
    fn transport_errors_are_retried() {
        let backend = Arc::new(ScriptedBackend::from_results(vec![
            Err(BackendError::Transport("timeout".into())),
            Err(BackendError::Transport("timeout".into())),
            Ok("fine".into()),
        ]));
        let gw = Gateway::new(backend).with_retry(RetryPolicy::immediate(3));
        let c = gw.complete(&req("q")).unwrap();
        assert_eq!(c.text, "fine");
        assert_eq!(c.retries, 2);
    }

    #[test]
    fn retries_are_bounded() {
        let backend = Arc::new(ScriptedBackend::from_results(vec![
            Err(BackendError::Transport("down".into()));
            5
        ]));
        let gw = Gateway::new(backend.clone()).with_retry(RetryPolicy::immediate(2));
        let err = gw.complete(&req("q")).unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 3, .. }));
        assert_eq!(gw.backend_calls(), 3);
    }

    #[test]
    fn backoff_respects_budget() {
        let backend = Arc::new(ScriptedBackend::from_results(vec![
            Err(BackendError::Transport("down".into()));
            5
        ]));
        let policy = RetryPolicy {
            max_retries: 4,
            base_delay: Duration::from_millis(40),
            budget: Duration::from_millis(100),
        };
        let gw = Gateway::new(backend).with_retry(policy);
        let started = Instant::now();
        assert!(gw.complete(&req("q")).is_err());
        assert!(started.elapsed() < Duration::from_millis(100));
        // 40ms then 80ms would overrun; only one sleep happens.
        assert_eq!(gw.backend_calls(), 2);
    }

    #[test]
    fn refusal_is_distinct_and_not_retried() {
        let backend = Arc::new(ScriptedBackend::from_results(vec![Err(BackendError::Refusal(
            "policy".into(),
        ))]));
        let gw = Gateway::new(backend).with_retry(RetryPolicy::immediate(3));
        assert_eq!(gw.complete(&req("q")).unwrap_err(), GatewayError::Refusal("policy".into()));
        assert_eq!(gw.backend_calls(), 1);
    }

    #[test]
    fn empty_prompt_rejected() {
        let gw = Gateway::new(Arc::new(ScriptedBackend::new(["x"])));
        assert!(matches!(gw.complete(&req("  ")), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn embed_empty_and_deterministic() {
        let gw = Gateway::new(Arc::new(ScriptedBackend::new(Vec::<String>::new())))
            .with_embedder(Arc::new(HashEmbedder::new(16)));
        assert!(gw.embed(&[], "hash").unwrap().is_empty());
        let v = gw.embed(&["a".to_string(), "a".to_string()], "hash").unwrap();
        assert_eq!(v[0], v[1]);
    }

    #[test]
    fn embed_detects_dimension_drift() {
        struct Drifting;
        impl EmbeddingBackend for Drifting {
            fn embed_batch(&self, _: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
                Ok(texts.iter().enumerate().map(|(i, _)| vec![1.0; 2 + i]).collect())
            }
        }
        let gw = Gateway::new(Arc::new(ScriptedBackend::new(Vec::<String>::new())))
            .with_embedder(Arc::new(Drifting));
        let err = gw.embed(&["a".into(), "b".into()], "m").unwrap_err();
        assert_eq!(err, GatewayError::DimensionMismatch { expected: 2, got: 3 });
    }

    #[test]
    fn in_flight_limit_is_honored() {
        use std::sync::atomic::AtomicUsize;
        struct Slow {
            now: AtomicUsize,
            peak: AtomicUsize,
        }
        impl CompletionBackend for Slow {
            fn complete(&self, _: &ModelRequest) -> Result<Reply, BackendError> {
                let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(n, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(10));
                self.now.fetch_sub(1, Ordering::SeqCst);
                Ok("ok".to_string().into())
            }
        }
        let backend = Arc::new(Slow {
            now: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let gw = Gateway::new(backend.clone()).with_in_flight_limit(2);
        std::thread::scope(|s| {
            for i in 0..8 {
                let gw = &gw;
                s.spawn(move || gw.complete(&req(&format!("p{i}"))).unwrap());
            }
        });
        assert!(backend.peak.load(Ordering::SeqCst) <= 2);
    }
}
