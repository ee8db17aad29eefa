//! Chat-completion access: the backend contract, a scripted mock, an
//! OpenAI-compatible HTTP client, and the response parsers.

use std::io::Write;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::domain::{ItemId, PromptId};
use crate::error::LlmError;
use crate::seeding::hex_digest;

mod fanout;
#[cfg(feature = "http")]
mod http;
mod mock;
pub mod parse;

pub use fanout::map_bounded;
#[cfg(feature = "http")]
pub use http::HttpBackend;
pub use mock::{MockBackend, MockScript, QUALITY_MARKER};

pub const DEFAULT_CONCURRENCY: usize = 8;

/// Side-channel data about a request. Never sent over the wire.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RequestMeta {
    pub session_id: Option<String>,
    pub prompt_id: Option<PromptId>,
    /// Candidate ids in the order they were shown to the model.
    pub candidates: Vec<ItemId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system: Option<String>,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Which agent issued the call, e.g. `"evaluate"`.
    pub tag: String,
    pub meta: RequestMeta,
}

impl ChatRequest {
    pub fn new(tag: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system: None,
            user: user.into(),
            temperature: 0.2,
            max_tokens: 1024,
            tag: tag.into(),
            meta: RequestMeta::default(),
        }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system = Some(system.into());
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_meta(mut self, meta: RequestMeta) -> Self {
        self.meta = meta;
        self
    }

    /// Stable content hash over tag, system and user text.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::with_capacity(self.user.len() + 64);
        for part in [self.tag.as_str(), self.system.as_deref().unwrap_or(""), self.user.as_str()] {
            buf.extend_from_slice(&(part.len() as u64).to_le_bytes());
            buf.extend_from_slice(part.as_bytes());
        }
        hex_digest(&buf)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub latency_ms: u64,
    /// Attempts beyond the first that were needed.
    pub retries: u32,
}

/// A chat-completion provider.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(req)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(req)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    #[default]
    Mock,
}

fn default_model() -> String {
    "meta-llama-3-8b-instruct".into()
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_concurrency() -> usize {
    DEFAULT_CONCURRENCY
}
fn default_api_key_env() -> String {
    "GREENREC_API_KEY".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default)]
    pub kind: BackendKind,
    /// Base URL of an OpenAI-compatible server, e.g. `http://localhost:8000/v1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            model: default_model(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            retry_backoff_ms: default_backoff_ms(),
            concurrency: default_concurrency(),
            api_key_env: default_api_key_env(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.concurrency == 0 {
            return Err(LlmError::Config("concurrency must be positive".into()));
        }
        if self.kind == BackendKind::Http && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return Err(LlmError::Config("http backend needs an endpoint".into()));
        }
        Ok(())
    }
}

/// Appends one JSON line per call to a sink (usually `llm_trace.jsonl`).
pub struct TracingBackend<B> {
    inner: B,
    sink: Mutex<Box<dyn Write + Send>>,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    tag: &'a str,
    fingerprint: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    session_id: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt_id: Option<PromptId>,
    ok: bool,
    latency_ms: u64,
    retries: u32,
    usage: Usage,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl<B: ChatBackend> TracingBackend<B> {
    pub fn new(inner: B, sink: Box<dyn Write + Send>) -> Self {
        Self {
            inner,
            sink: Mutex::new(sink),
        }
    }
}

impl<B: ChatBackend> ChatBackend for TracingBackend<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let result = self.inner.complete(req);
        let line = TraceLine {
            tag: &req.tag,
            fingerprint: req.fingerprint(),
            session_id: req.meta.session_id.as_deref(),
            prompt_id: req.meta.prompt_id,
            ok: result.is_ok(),
            latency_ms: result.as_ref().map(|r| r.latency_ms).unwrap_or(0),
            retries: result.as_ref().map(|r| r.retries).unwrap_or(0),
            usage: result.as_ref().map(|r| r.usage).unwrap_or_default(),
            error: result.as_ref().err().map(ToString::to_string),
        };
        if let Ok(json) = serde_json::to_string(&line) {
            let mut sink = self.sink.lock().unwrap_or_else(|e| e.into_inner());
            if let Err(e) = writeln!(sink, "{json}").and_then(|_| sink.flush()) {
                log::warn!("failed to write llm trace: {e}");
            }
        }
        result
    }
}

/// Rough whitespace token count, used where a server reports no usage.
pub(crate) fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
