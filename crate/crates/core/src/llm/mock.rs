//! Deterministic scripted stand-in for an LLM.
//!
//! Lookup order for a request:
//! 1. `fingerprints` table keyed by [`ChatRequest::fingerprint`];
//! 2. quality-biased ranking, for `evaluate` requests whose text carries a
//!    `{{q=x}}` marker;
//! 3. `by_prompt[tag][prompt_id]`;
//! 4. `tags[tag]`.
//!
//! The mock holds no mutable state, so identical requests always get
//! identical answers and concurrent use is safe.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{approx_tokens, ChatBackend, ChatRequest, ChatResponse, Usage};
use crate::domain::{ItemId, Session};
use crate::error::LlmError;
use crate::seeding::keyed_rng;

/// Opening of the quality marker, e.g. `{{q=0.9}}`.
pub const QUALITY_MARKER: &str = "{{q=";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
    #[serde(default)]
    pub by_prompt: BTreeMap<String, BTreeMap<u32, String>>,
    #[serde(default)]
    pub fingerprints: BTreeMap<String, String>,
    /// Mixed into the quality-biased ranker's RNG.
    #[serde(default)]
    pub seed: u64,
}

impl MockScript {
    pub fn with_tag(mut self, tag: impl Into<String>, text: impl Into<String>) -> Self {
        self.tags.insert(tag.into(), text.into());
        self
    }

    pub fn with_prompt_reply(mut self, tag: impl Into<String>, prompt_id: u32, text: impl Into<String>) -> Self {
        self.by_prompt.entry(tag.into()).or_default().insert(prompt_id, text.into());
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    script: MockScript,
    targets: HashMap<String, ItemId>,
}

/// Reads the first `{{q=x}}` marker, clamped into `[0, 1]`.
pub fn quality_of(text: &str) -> Option<f64> {
    let start = text.find(QUALITY_MARKER)? + QUALITY_MARKER.len();
    let rest = &text[start..];
    let end = rest.find("}}")?;
    let q: f64 = rest[..end].trim().parse().ok()?;
    q.is_finite().then(|| q.clamp(0.0, 1.0))
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            targets: HashMap::new(),
        }
    }

    /// Tells the quality-biased ranker where each session's target is.
    pub fn with_targets<'a>(mut self, sessions: impl IntoIterator<Item = &'a Session>) -> Self {
        for s in sessions {
            self.targets.insert(s.session_id.clone(), s.target.clone());
        }
        self
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    /// A ranking that puts the target first with probability `q` and
    /// otherwise uniformly at ranks `2..=n`. The stream is keyed by
    /// `(session, prompt)`, so repeat evaluations agree.
    fn quality_ranking(&self, req: &ChatRequest, q: f64) -> Option<String> {
        let session_id = req.meta.session_id.as_deref()?;
        let target = self.targets.get(session_id)?;
        let candidates = &req.meta.candidates;
        if candidates.is_empty() {
            return None;
        }
        let prompt_key = req.meta.prompt_id.map(|p| p.0).unwrap_or(0);
        let mut rng = keyed_rng("mock-quality", self.script.seed, &format!("{session_id}\u{1f}{prompt_key}"));

        let n = candidates.len();
        let target_idx = candidates.iter().position(|c| c == target);
        let mut others: Vec<usize> = (0..n).filter(|&i| Some(i) != target_idx).collect();
        let hit: f64 = rng.random();
        others.shuffle(&mut rng);
        let mut order = others;
        if let Some(t) = target_idx {
            let rank = if hit < q || n == 1 { 1 } else { rng.random_range(2..=n) };
            order.insert(rank - 1, t);
        }
        let indices: Vec<String> = order.iter().map(|i| (i + 1).to_string()).collect();
        Some(format!("[{}]", indices.join(",")))
    }

    fn lookup(&self, req: &ChatRequest) -> Result<String, LlmError> {
        if let Some(text) = self.script.fingerprints.get(&req.fingerprint()) {
            return Ok(text.clone());
        }
        if req.tag == "evaluate" {
            if let Some(text) = quality_of(&req.user).and_then(|q| self.quality_ranking(req, q)) {
                return Ok(text);
            }
        }
        if let (Some(table), Some(pid)) = (self.script.by_prompt.get(&req.tag), req.meta.prompt_id) {
            if let Some(text) = table.get(&pid.0) {
                return Ok(text.clone());
            }
        }
        self.script
            .tags
            .get(&req.tag)
            .cloned()
            .ok_or_else(|| LlmError::Unscripted(req.tag.clone()))
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let text = self.lookup(req)?;
        if text.trim().is_empty() {
            return Err(LlmError::EmptyCompletion);
        }
        let prompt_tokens = approx_tokens(req.system.as_deref().unwrap_or("")) + approx_tokens(&req.user);
        Ok(ChatResponse {
            usage: Usage {
                prompt_tokens,
                completion_tokens: approx_tokens(&text),
            },
            text,
            latency_ms: 0,
            retries: 0,
        })
    }
}
