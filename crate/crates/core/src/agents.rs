//! The six agents of the optimization loop.
//!
//! `Evaluate`, `InferReason`, `RefinePrompt` and `Augment` talk to the LLM
//! through [`Agents`]; `DetectError` and `Select` are plain functions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{render_item, CandidateSet, Catalog, ItemId, Prompt, PromptId, PromptOrigin, PromptStats, RankedList, Session};
use crate::error::{AgentError, DomainError};
use crate::llm::parse::{extract_tagged, numbered_list, parse_ranked_list, parse_variants, END_TAG, START_TAG};
use crate::llm::{ChatBackend, ChatRequest, RequestMeta};

pub const SESSION_PLACEHOLDER: &str = "{session}";
pub const CANDIDATES_PLACEHOLDER: &str = "{candidates}";
pub const DEFAULT_ERROR_THRESHOLD: usize = 10;
pub const MAX_REASONS: usize = 5;
/// How many of the top-ranked items the reflection request shows.
pub const REFLECTION_TOP_ITEMS: usize = 5;

pub const TAG_EVALUATE: &str = "evaluate";
pub const TAG_INFER_REASON: &str = "infer_reason";
pub const TAG_REFINE_PROMPT: &str = "refine_prompt";
pub const TAG_AUGMENT: &str = "augment";

pub fn default_seed_prompt() -> &'static str {
    include_str!("../prompts/seed.txt").trim_end()
}

/// Substitutes `{key}` occurrences in a single left-to-right pass.
///
/// Inserted values are never rescanned, and braces that do not spell one of
/// the given keys are copied through unchanged.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        let hit = values.iter().find(|(key, _)| {
            tail.len() > key.len() + 1
                && tail[1..].starts_with(key)
                && tail.as_bytes()[key.len() + 1] == b'}'
        });
        match hit {
            Some((key, value)) => {
                out.push_str(value);
                rest = &tail[key.len() + 2..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn has_placeholders(text: &str) -> bool {
    text.contains(SESSION_PLACEHOLDER) && text.contains(CANDIDATES_PLACEHOLDER)
}

fn numbered(lines: impl IntoIterator<Item = String>) -> String {
    lines
        .into_iter()
        .enumerate()
        .map(|(i, l)| format!("{}. {l}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Numbered, chronological rendering of the session's interactions.
pub fn render_session(session: &Session, catalog: &Catalog) -> Result<String, DomainError> {
    let lines = session
        .interactions
        .iter()
        .map(|id| catalog.require(id).map(|i| render_item(i, true)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(numbered(lines))
}

/// Numbered rendering of the candidates; numbers are the 1-based indices the
/// model answers with.
pub fn render_candidates(candidates: &CandidateSet, catalog: &Catalog) -> Result<String, DomainError> {
    let lines = candidates
        .candidates
        .iter()
        .map(|id| catalog.require(id).map(|i| render_item(i, true)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(numbered(lines))
}

/// Fills a ranking prompt for one session.
pub fn render_evaluate_prompt(
    prompt: &Prompt,
    session: &Session,
    candidates: &CandidateSet,
    catalog: &Catalog,
) -> Result<String, DomainError> {
    let s = render_session(session, catalog)?;
    let c = render_candidates(candidates, catalog)?;
    Ok(fill_template(&prompt.text, &[("session", &s), ("candidates", &c)]))
}

/// A session whose target landed outside the accepted top positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCase {
    pub session_id: String,
    pub prompt_id: PromptId,
    pub target: ItemId,
    /// 1-based; `|order| + 1` when the target is missing.
    pub target_rank: usize,
    pub threshold: usize,
    pub repaired: bool,
    pub top_ranked: Vec<ItemId>,
}

/// Flags the ranking when the target sits strictly below `threshold`.
pub fn detect_error(ranked: &RankedList, target: &str, threshold: usize, prompt_id: PromptId) -> Option<ErrorCase> {
    let rank = ranked.rank_of(target).unwrap_or(ranked.order.len() + 1);
    (rank > threshold).then(|| ErrorCase {
        session_id: ranked.session_id.clone(),
        prompt_id,
        target: target.to_string(),
        target_rank: rank,
        threshold,
        repaired: ranked.repaired,
        top_ranked: ranked.order.iter().take(REFLECTION_TOP_ITEMS).cloned().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonList {
    pub hypotheses: Vec<String>,
}

/// Upper confidence bound of a prompt after `t` total trials.
///
/// Unpulled prompts are worth `+inf`; otherwise
/// `mean + c * sqrt(ln t / pulls)`.
pub fn ucb_value(stats: &PromptStats, t: u64, c: f64) -> f64 {
    if stats.pull_count == 0 {
        return f64::INFINITY;
    }
    let n = stats.pull_count as f64;
    let t = t.max(1) as f64;
    stats.reward_sum / n + c * (t.ln() / n).sqrt()
}

/// The prompt with the largest UCB value; ties go to the lowest id.
pub fn select_prompt(pool: &BTreeMap<PromptId, PromptStats>, t: u64, c: f64) -> Option<PromptId> {
    let mut best: Option<(PromptId, f64)> = None;
    for (&id, stats) in pool {
        let value = ucb_value(stats, t, c);
        if best.is_none_or(|(_, v)| value > v) {
            best = Some((id, value));
        }
    }
    best.map(|(id, _)| id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentParams {
    #[serde(default = "AgentParams::default_eval_temperature")]
    pub eval_temperature: f64,
    #[serde(default = "AgentParams::default_creative_temperature")]
    pub creative_temperature: f64,
    #[serde(default = "AgentParams::default_max_tokens")]
    pub max_tokens: u32,
}

impl AgentParams {
    fn default_eval_temperature() -> f64 {
        0.2
    }
    fn default_creative_temperature() -> f64 {
        0.8
    }
    fn default_max_tokens() -> u32 {
        1024
    }
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            eval_temperature: Self::default_eval_temperature(),
            creative_temperature: Self::default_creative_temperature(),
            max_tokens: Self::default_max_tokens(),
        }
    }
}

/// Meta-prompt templates for the reflection agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub infer_reason: String,
    pub refine_prompt: String,
    pub augment: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            infer_reason: include_str!("../prompts/infer_reason.txt").trim_end().to_string(),
            refine_prompt: include_str!("../prompts/refine_prompt.txt").trim_end().to_string(),
            augment: include_str!("../prompts/augment.txt").trim_end().to_string(),
        }
    }
}

/// LLM-backed agents sharing one backend and catalog.
pub struct Agents<'a> {
    pub backend: &'a dyn ChatBackend,
    pub catalog: &'a Catalog,
    pub templates: Templates,
    pub params: AgentParams,
}

impl<'a> Agents<'a> {
    pub fn new(backend: &'a dyn ChatBackend, catalog: &'a Catalog) -> Self {
        Self {
            backend,
            catalog,
            templates: Templates::default(),
            params: AgentParams::default(),
        }
    }

    fn request(&self, tag: &str, user: String, temperature: f64, meta: RequestMeta) -> ChatRequest {
        ChatRequest {
            system: None,
            user,
            temperature,
            max_tokens: self.params.max_tokens,
            tag: tag.to_string(),
            meta,
        }
    }

    /// Ranks the filtered candidates for one session with `prompt`.
    pub fn evaluate(&self, prompt: &Prompt, session: &Session, candidates: &CandidateSet) -> Result<RankedList, AgentError> {
        let user = render_evaluate_prompt(prompt, session, candidates, self.catalog)?;
        let meta = RequestMeta {
            session_id: Some(session.session_id.clone()),
            prompt_id: Some(prompt.id),
            candidates: candidates.candidates.clone(),
        };
        let req = self.request(TAG_EVALUATE, user, self.params.eval_temperature, meta);
        let reply = self.backend.complete(&req)?;
        Ok(parse_ranked_list(&reply.text, candidates, self.catalog)?)
    }

    /// The reflection request sent for an error case.
    pub fn reflection_request(
        &self,
        prompt: &Prompt,
        error: &ErrorCase,
        session: &Session,
        candidates: &CandidateSet,
    ) -> Result<ChatRequest, AgentError> {
        let session_text = render_session(session, self.catalog)?;
        let target = render_item(self.catalog.require(&error.target)?, true);
        let top = error
            .top_ranked
            .iter()
            .map(|id| self.catalog.require(id).map(|i| render_item(i, true)))
            .collect::<Result<Vec<_>, _>>()?;
        let rank = if error.target_rank > candidates.len() {
            "below every candidate (it was missing from the list)".to_string()
        } else {
            error.target_rank.to_string()
        };
        let user = fill_template(
            &self.templates.infer_reason,
            &[
                ("prompt", &prompt.text),
                ("session", &session_text),
                ("target", &target),
                ("target_rank", &rank),
                ("n_candidates", &candidates.len().to_string()),
                ("threshold", &error.threshold.to_string()),
                ("top_items", &numbered(top)),
            ],
        );
        let meta = RequestMeta {
            session_id: Some(session.session_id.clone()),
            prompt_id: Some(prompt.id),
            candidates: Vec::new(),
        };
        Ok(self.request(TAG_INFER_REASON, user, self.params.creative_temperature, meta))
    }

    /// Asks the model why `prompt` failed on this session.
    pub fn infer_reason(
        &self,
        prompt: &Prompt,
        error: &ErrorCase,
        session: &Session,
        candidates: &CandidateSet,
    ) -> Result<ReasonList, AgentError> {
        let req = self.reflection_request(prompt, error, session, candidates)?;
        let reply = self.backend.complete(&req)?;
        let mut hypotheses = numbered_list(&reply.text);
        hypotheses.truncate(MAX_REASONS);
        if hypotheses.is_empty() {
            return Err(AgentError::NoReasons);
        }
        Ok(ReasonList { hypotheses })
    }

    /// Rewrites `prompt` to address `reasons`. The child gets `next_id`.
    pub fn refine_prompt(&self, prompt: &Prompt, reasons: &ReasonList, next_id: PromptId) -> Result<Prompt, AgentError> {
        if reasons.hypotheses.is_empty() {
            return Err(AgentError::NoReasons);
        }
        let reasons_text = numbered(reasons.hypotheses.iter().cloned());
        let user = fill_template(&self.templates.refine_prompt, &[("prompt", &prompt.text), ("reasons", &reasons_text)]);
        let meta = RequestMeta {
            prompt_id: Some(prompt.id),
            ..Default::default()
        };
        let req = self.request(TAG_REFINE_PROMPT, user, self.params.creative_temperature, meta);
        let reply = self.backend.complete(&req)?;
        let text = extract_tagged(&reply.text, START_TAG, END_TAG)?;
        if !has_placeholders(&text) {
            return Err(AgentError::MissingPlaceholders);
        }
        Ok(Prompt {
            id: next_id,
            parent: Some(prompt.id),
            origin: PromptOrigin::Refined,
            text,
        })
    }

    /// Paraphrases `prompt` into up to `n_variants` siblings. Variants that
    /// lost a placeholder are dropped; ids are assigned from `first_id`.
    pub fn augment(&self, prompt: &Prompt, n_variants: usize, first_id: PromptId) -> Result<Vec<Prompt>, AgentError> {
        if !(3..=5).contains(&n_variants) {
            return Err(AgentError::VariantCount(n_variants));
        }
        let user = fill_template(
            &self.templates.augment,
            &[("prompt", &prompt.text), ("n_variants", &n_variants.to_string())],
        );
        let meta = RequestMeta {
            prompt_id: Some(prompt.id),
            ..Default::default()
        };
        let req = self.request(TAG_AUGMENT, user, self.params.creative_temperature, meta);
        let reply = self.backend.complete(&req)?;
        let texts = parse_variants(&reply.text)?;
        let variants: Vec<Prompt> = texts
            .into_iter()
            .filter(|t| has_placeholders(t))
            .take(n_variants)
            .zip(first_id.0..)
            .map(|(text, id)| Prompt {
                id: PromptId(id),
                parent: Some(prompt.id),
                origin: PromptOrigin::Variant,
                text,
            })
            .collect();
        if variants.is_empty() {
            return Err(AgentError::Parse(crate::error::ParseError::NoVariants));
        }
        Ok(variants)
    }
}
