//! OpenAI-compatible `/chat/completions` client.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{approx_tokens, BackendConfig, ChatBackend, ChatRequest, ChatResponse, Usage};
use crate::error::LlmError;

pub struct HttpBackend {
    url: String,
    model: String,
    api_key: Option<String>,
    max_retries: u32,
    retry_backoff: Duration,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    messages: Vec<Message<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionReply {
    #[serde(default)]
    choices: Vec<Choice>,
    usage: Option<ReplyUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ReplyUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

fn completions_url(endpoint: &str) -> String {
    let base = endpoint.trim_end_matches('/');
    if base.ends_with("/chat/completions") {
        base.to_string()
    } else {
        format!("{base}/chat/completions")
    }
}

impl HttpBackend {
    /// Builds a client; the bearer token is read from `cfg.api_key_env` if set.
    pub fn new(cfg: &BackendConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let endpoint = cfg.endpoint.as_deref().unwrap_or_default();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            url: completions_url(endpoint),
            model: cfg.model.clone(),
            api_key: std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty()),
            max_retries: cfg.max_retries,
            retry_backoff: Duration::from_millis(cfg.retry_backoff_ms),
            client,
        })
    }

    fn attempt(&self, req: &ChatRequest) -> Result<(String, Usage), LlmError> {
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = req.system.as_deref() {
            messages.push(Message {
                role: "system",
                content: system,
            });
        }
        messages.push(Message {
            role: "user",
            content: &req.user,
        });
        let body = CompletionBody {
            model: &self.model,
            messages,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
        };
        let mut call = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout
            } else {
                LlmError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(LlmError::BadStatus(status.as_u16()));
        }
        let reply: CompletionReply = resp.json().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout
            } else {
                LlmError::Transport(format!("invalid completion body: {e}"))
            }
        })?;
        let text = reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|t| !t.trim().is_empty())
            .ok_or(LlmError::EmptyCompletion)?;
        let usage = match reply.usage {
            Some(u) => Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            },
            None => Usage {
                prompt_tokens: approx_tokens(&req.user),
                completion_tokens: approx_tokens(&text),
            },
        };
        Ok((text, usage))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let started = Instant::now();
        let mut retries = 0;
        loop {
            match self.attempt(req) {
                Ok((text, usage)) => {
                    return Ok(ChatResponse {
                        text,
                        usage,
                        latency_ms: started.elapsed().as_millis() as u64,
                        retries,
                    })
                }
                Err(e) if e.is_transient() && retries < self.max_retries => {
                    let wait = self.retry_backoff.saturating_mul(1 << retries.min(16));
                    log::debug!("{} call failed ({e}); retry {} in {wait:?}", req.tag, retries + 1);
                    std::thread::sleep(wait);
                    retries += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
