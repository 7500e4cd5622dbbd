//! Chat-completion access to language models with record/replay.
//!
//! Every model call in the pipeline goes through [`Gateway::chat`]. In `live` mode the
//! request is sent to the backend; `record` additionally stores the exchange in a
//! [`FixtureStore`]; `replay` answers from the store without touching the network, using
//! the recorded latency so timing reports are reproducible offline.

mod fixtures;
mod ollama;
mod scripted;

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

pub use fixtures::{fixture_key, FixtureStore};
pub use ollama::{OllamaBackend, DEFAULT_ENDPOINT};
pub use scripted::ScriptedBackend;

/// Environment variable that overrides the configured endpoint URL.
pub const ENDPOINT_ENV: &str = "FINNER_ENDPOINT";

pub fn resolve_endpoint(configured: Option<&str>) -> String {
    std::env::var(ENDPOINT_ENV)
        .ok()
        .filter(|s| !s.trim().is_empty())
        .or_else(|| configured.map(str::to_string))
        .unwrap_or_else(|| DEFAULT_ENDPOINT.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Extraction,
    Structuring,
    Matching,
    Verification,
}

impl Purpose {
    const ALL: [Purpose; 4] = [
        Purpose::Extraction,
        Purpose::Structuring,
        Purpose::Matching,
        Purpose::Verification,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub temperature: f64,
    pub seed: Option<u64>,
    pub max_tokens: Option<u32>,
}

impl Default for ChatParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            seed: Some(42),
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub prompt: String,
    pub params: ChatParams,
    pub purpose: Purpose,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, prompt: impl Into<String>, purpose: Purpose) -> Self {
        Self {
            model_id: model_id.into(),
            prompt: prompt.into(),
            params: ChatParams::default(),
            purpose,
        }
    }

    pub fn with_params(mut self, params: ChatParams) -> Self {
        self.params = params;
        self
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.model_id.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty model id".into()));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN as well
        if !(self.params.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.params.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExchangeMode {
    Live,
    Replayed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub request: ChatRequest,
    pub response_text: String,
    pub latency_s: f64,
    pub mode: ExchangeMode,
    /// Failed attempts before the successful one.
    #[serde(default)]
    pub retries: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    Live,
    Record,
    #[default]
    Replay,
}

impl std::str::FromStr for GatewayMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(GatewayMode::Live),
            "record" => Ok(GatewayMode::Record),
            "replay" => Ok(GatewayMode::Replay),
            other => Err(format!(
                "unknown gateway mode '{other}' (live|record|replay)"
            )),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("unexpected reply: {0}")]
    Protocol(String),
}

impl BackendError {
    fn retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status >= 500,
            BackendError::Timeout | BackendError::Protocol(_) => false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("no recorded exchange for request key {key}")]
    MissingFixture { key: String },
    #[error("model call failed after {attempts} attempt(s): {source}")]
    Backend {
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fixture {path}: {message}")]
    Fixture { path: PathBuf, message: String },
    #[error("{0} mode needs a model backend")]
    NoBackend(&'static str),
}

/// Something that can answer a prompt: an HTTP model server, or a scripted stand-in.
#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
    async fn list_models(&self) -> Result<Vec<String>, BackendError>;
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    pub endpoint: String,
    pub fixture_dir: Option<PathBuf>,
    /// In replay mode, fail on an unknown request instead of falling back to the backend.
    pub strict_replay: bool,
    pub timeout: Duration,
    pub retries: u32,
    pub backoff: Duration,
    pub max_in_flight: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            mode: GatewayMode::Replay,
            endpoint: DEFAULT_ENDPOINT.to_string(),
            fixture_dir: None,
            strict_replay: true,
            timeout: Duration::from_secs(120),
            retries: 2,
            backoff: Duration::from_millis(500),
            max_in_flight: 1,
        }
    }
}

pub struct Gateway {
    mode: GatewayMode,
    backend: Option<Arc<dyn ChatBackend>>,
    store: Option<FixtureStore>,
    strict_replay: bool,
    retries: u32,
    backoff: Duration,
    in_flight: Semaphore,
    calls: [AtomicUsize; 4],
    logging: AtomicBool,
    log: Mutex<Vec<ChatExchange>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("mode", &self.mode)
            .field("store", &self.store)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    /// Builds a gateway talking to an Ollama-compatible server.
    pub fn from_config(config: &GatewayConfig) -> Result<Self, GatewayError> {
        let backend: Option<Arc<dyn ChatBackend>> = match config.mode {
            GatewayMode::Replay if config.strict_replay => None,
            _ => Some(Arc::new(
                OllamaBackend::new(config.endpoint.clone(), config.timeout).map_err(|source| {
                    GatewayError::Backend {
                        attempts: 0,
                        source,
                    }
                })?,
            )),
        };
        Self::with_backend(config, backend)
    }

    pub fn with_backend(
        config: &GatewayConfig,
        backend: Option<Arc<dyn ChatBackend>>,
    ) -> Result<Self, GatewayError> {
        let needs_store = matches!(config.mode, GatewayMode::Record | GatewayMode::Replay);
        let store = match (&config.fixture_dir, needs_store) {
            (Some(dir), _) => Some(FixtureStore::new(dir.clone())),
            (None, true) => {
                return Err(GatewayError::InvalidRequest(
                    "record and replay modes need a fixture directory".into(),
                ))
            }
            (None, false) => None,
        };
        let backend_required = match config.mode {
            GatewayMode::Live | GatewayMode::Record => Some("live/record"),
            GatewayMode::Replay if !config.strict_replay => Some("non-strict replay"),
            GatewayMode::Replay => None,
        };
        if let (Some(mode), None) = (backend_required, &backend) {
            return Err(GatewayError::NoBackend(mode));
        }
        Ok(Self {
            mode: config.mode,
            backend,
            store,
            strict_replay: config.strict_replay,
            retries: config.retries,
            backoff: config.backoff,
            in_flight: Semaphore::new(config.max_in_flight.max(1)),
            calls: Default::default(),
            logging: AtomicBool::new(true),
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn store(&self) -> Option<&FixtureStore> {
        self.store.as_ref()
    }

    /// Number of `chat` calls issued for a purpose since construction.
    pub fn call_count(&self, purpose: Purpose) -> usize {
        self.calls[purpose.index()].load(Ordering::Relaxed)
    }

    pub fn total_calls(&self) -> usize {
        Purpose::ALL.iter().map(|p| self.call_count(*p)).sum()
    }

    /// Enables or disables the in-memory exchange log (on by default).
    pub fn set_logging(&self, on: bool) {
        self.logging.store(on, Ordering::Relaxed);
    }

    /// Drains the exchange log.
    pub fn take_log(&self) -> Vec<ChatExchange> {
        std::mem::take(&mut *self.log.lock().expect("log lock"))
    }

    pub async fn chat(&self, request: ChatRequest) -> Result<ChatExchange, GatewayError> {
        request.validate()?;
        self.calls[request.purpose.index()].fetch_add(1, Ordering::Relaxed);
        let exchange = match self.mode {
            GatewayMode::Live => self.call_backend(request).await?,
            GatewayMode::Record => {
                let exchange = self.call_backend(request).await?;
                self.store_ref().put(&exchange).await?;
                exchange
            }
            GatewayMode::Replay => {
                let key = fixture_key(&request);
                match self.store_ref().get(&key).await? {
                    Some(recorded) => ChatExchange {
                        request,
                        response_text: recorded.response_text,
                        latency_s: recorded.latency_s,
                        mode: ExchangeMode::Replayed,
                        retries: 0,
                    },
                    None if self.strict_replay => return Err(GatewayError::MissingFixture { key }),
                    None => {
                        tracing::warn!(%key, "no fixture; falling back to the live backend");
                        let exchange = self.call_backend(request).await?;
                        self.store_ref().put(&exchange).await?;
                        exchange
                    }
                }
            }
        };
        if self.logging.load(Ordering::Relaxed) {
            self.log.lock().expect("log lock").push(exchange.clone());
        }
        Ok(exchange)
    }

    fn store_ref(&self) -> &FixtureStore {
        self.store.as_ref().expect("store checked at construction")
    }

    async fn call_backend(&self, request: ChatRequest) -> Result<ChatExchange, GatewayError> {
        let backend = self
            .backend
            .as_ref()
            .ok_or(GatewayError::NoBackend("live"))?;
        let _permit = self.in_flight.acquire().await.expect("semaphore open");
        let started = Instant::now();
        let mut attempt: u32 = 0;
        loop {
            match backend.complete(&request).await {
                Ok(text) => {
                    return Ok(ChatExchange {
                        request,
                        response_text: text,
                        latency_s: started.elapsed().as_secs_f64(),
                        mode: ExchangeMode::Live,
                        retries: attempt,
                    })
                }
                Err(e) if e.retryable() && attempt < self.retries => {
                    let wait = self.backoff * 2u32.saturating_pow(attempt);
                    tracing::warn!(attempt = attempt + 1, error = %e, ?wait, "model call failed; retrying");
                    tokio::time::sleep(wait).await;
                    attempt += 1;
                }
                Err(source) => {
                    return Err(GatewayError::Backend {
                        attempts: attempt + 1,
                        source,
                    })
                }
            }
        }
    }

    /// Whether the backend serves `model_id`. Always true in strict replay mode.
    pub async fn health_check(&self, model_id: &str) -> bool {
        let Some(backend) = self.backend.as_ref() else {
            return true;
        };
        if self.mode == GatewayMode::Replay {
            return true;
        }
        match backend.list_models().await {
            Ok(models) => models.iter().any(|m| model_matches(m, model_id)),
            Err(e) => {
                tracing::warn!(model = model_id, error = %e, "health check failed");
                false
            }
        }
    }
}

fn model_matches(served: &str, wanted: &str) -> bool {
    served == wanted || (!wanted.contains(':') && served == format!("{wanted}:latest"))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flaky {
        failures: Mutex<u32>,
    }

    #[async_trait]
    impl ChatBackend for Flaky {
        async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
            let mut left = self.failures.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                return Err(BackendError::Status {
                    status: 500,
                    body: "boom".into(),
                });
            }
            Ok(format!("echo:{}", request.prompt))
        }

        async fn list_models(&self) -> Result<Vec<String>, BackendError> {
            Ok(vec!["gemma2:9b".into(), "llama3:latest".into()])
        }
    }

    fn config(mode: GatewayMode, dir: Option<PathBuf>) -> GatewayConfig {
        GatewayConfig {
            mode,
            fixture_dir: dir,
            backoff: Duration::from_millis(1),
            ..GatewayConfig::default()
        }
    }

    fn flaky(failures: u32) -> Option<Arc<dyn ChatBackend>> {
        Some(Arc::new(Flaky {
            failures: Mutex::new(failures),
        }))
    }

    #[tokio::test]
    async fn retries_then_succeeds() {
        let gw = Gateway::with_backend(&config(GatewayMode::Live, None), flaky(2)).unwrap();
        let ex = gw
            .chat(ChatRequest::new("gemma2:9b", "hi", Purpose::Extraction))
            .await
            .unwrap();
        assert_eq!(ex.retries, 2);
        assert_eq!(ex.response_text, "echo:hi");
        assert_eq!(gw.take_log()[0].retries, 2);
    }

    #[tokio::test]
    async fn gives_up_after_configured_retries() {
        let gw = Gateway::with_backend(&config(GatewayMode::Live, None), flaky(3)).unwrap();
        let err = gw
            .chat(ChatRequest::new("m", "hi", Purpose::Extraction))
            .await
            .unwrap_err();
        assert!(
            matches!(err, GatewayError::Backend { attempts: 3, .. }),
            "{err}"
        );
    }

    #[tokio::test]
    async fn record_then_replay_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let rec = Gateway::with_backend(
            &config(GatewayMode::Record, Some(dir.path().into())),
            flaky(0),
        )
        .unwrap();
        let req = ChatRequest::new("m", "prompt \u{e9}\r\n", Purpose::Matching);
        let live = rec.chat(req.clone()).await.unwrap();

        let rep =
            Gateway::with_backend(&config(GatewayMode::Replay, Some(dir.path().into())), None)
                .unwrap();
        let replayed = rep.chat(req).await.unwrap();
        assert_eq!(
            replayed.response_text.as_bytes(),
            live.response_text.as_bytes()
        );
        assert_eq!(replayed.latency_s, live.latency_s);
        assert_eq!(replayed.mode, ExchangeMode::Replayed);
        assert_eq!(rep.call_count(Purpose::Matching), 1);
        assert_eq!(rep.call_count(Purpose::Structuring), 0);
    }

    #[tokio::test]
    async fn strict_replay_names_missing_key() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::with_backend(&config(GatewayMode::Replay, Some(dir.path().into())), None)
            .unwrap();
        let req = ChatRequest::new("m", "unknown", Purpose::Extraction);
        let key = fixture_key(&req);
        match gw.chat(req).await {
            Err(GatewayError::MissingFixture { key: k }) => assert_eq!(k, key),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[tokio::test]
    async fn lenient_replay_falls_back_and_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(GatewayMode::Replay, Some(dir.path().into()));
        cfg.strict_replay = false;
        let gw = Gateway::with_backend(&cfg, flaky(0)).unwrap();
        let req = ChatRequest::new("m", "new", Purpose::Extraction);
        assert_eq!(gw.chat(req.clone()).await.unwrap().mode, ExchangeMode::Live);
        assert_eq!(gw.chat(req).await.unwrap().mode, ExchangeMode::Replayed);
    }

    #[tokio::test]
    async fn health_checks() {
        let gw = Gateway::with_backend(&config(GatewayMode::Live, None), flaky(0)).unwrap();
        assert!(gw.health_check("gemma2:9b").await);
        assert!(gw.health_check("llama3").await);
        assert!(!gw.health_check("nope:0b").await);

        let dir = tempfile::tempdir().unwrap();
        let replay =
            Gateway::with_backend(&config(GatewayMode::Replay, Some(dir.path().into())), None)
                .unwrap();
        assert!(replay.health_check("anything").await);
    }

    #[tokio::test]
    async fn invalid_requests_rejected() {
        let gw = Gateway::with_backend(&config(GatewayMode::Live, None), flaky(0)).unwrap();
        assert!(gw
            .chat(ChatRequest::new(" ", "p", Purpose::Extraction))
            .await
            .is_err());
        let mut req = ChatRequest::new("m", "p", Purpose::Extraction);
        req.params.temperature = -0.1;
        assert!(matches!(
            gw.chat(req).await,
            Err(GatewayError::InvalidRequest(_))
        ));
    }

    #[test]
    fn modes_need_their_parts() {
        assert!(Gateway::with_backend(&config(GatewayMode::Replay, None), None).is_err());
        assert!(Gateway::with_backend(&config(GatewayMode::Live, None), None).is_err());
    }
}
