use thiserror::Error;

use crate::domain::PromptId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("item id must be non-empty")]
    EmptyItemId,
    #[error("item {0} has an empty title")]
    EmptyTitle(String),
    #[error("duplicate item id {0:?}")]
    DuplicateId(String),
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("session {0:?} has no interactions")]
    EmptySession(String),
    #[error("session {session_id:?} references unknown item {item_id:?}")]
    UnknownSessionItem { session_id: String, item_id: String },
    #[error("candidate set for {session_id:?} lists {item_id:?} more than once")]
    DuplicateCandidate { session_id: String, item_id: String },
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: duplicate item id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: duplicate session id {session_id:?}")]
    DuplicateSession { line: usize, session_id: String },
    #[error("session {session_id:?} references unknown item {item_id:?}")]
    UnknownItem { session_id: String, item_id: String },
    #[error("session {0:?} has no interactions")]
    EmptySession(String),
    #[error("catalog has {available} items, need at least {needed}")]
    CatalogTooSmall { needed: usize, available: usize },
    #[error("n_initial must be at least 1")]
    ZeroCandidates,
}

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer failure: {0}")]
    Failure(String),
    #[error("scorer returned {got} scores for {expected} pairs")]
    LengthMismatch { expected: usize, got: usize },
    #[error("scorer returned out-of-range score {0}")]
    OutOfRange(f64),
}

#[derive(Debug, Error)]
pub enum RerankError {
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("cannot keep {k_filter} of {available} candidates")]
    TooFewCandidates { k_filter: usize, available: usize },
    #[error("session {0:?} has no interactions")]
    EmptySession(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected HTTP status {0}")]
    BadStatus(u16),
    #[error("completion had no content")]
    EmptyCompletion,
    #[error("mock backend has no script entry for tag {0:?}")]
    Unscripted(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

impl LlmError {
    /// Whether a retry has a chance of succeeding.
    pub fn is_transient(&self) -> bool {
        match self {
            LlmError::Timeout | LlmError::Transport(_) => true,
            LlmError::BadStatus(code) => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no ranking entry could be extracted")]
    Unparseable,
    #[error("tagged block not found")]
    TagNotFound,
    #[error("no prompt variants found")]
    NoVariants,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("no reasons could be parsed from the reflection")]
    NoReasons,
    #[error("prompt is missing the {{session}} or {{candidates}} placeholder")]
    MissingPlaceholders,
    #[error("variant count {0} outside 3..=5")]
    VariantCount(usize),
}

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("no training sessions")]
    NoSessions,
    #[error("no seed prompts")]
    NoSeedPrompts,
    #[error("session {0:?} has no filtered candidate set")]
    MissingCandidates(String),
    #[error("every session failed at the backend for 3 consecutive trials (last trial {0})")]
    Aborted(usize),
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error("trial log does not replay: {0}")]
    Replay(String),
    #[error("unknown prompt {0}")]
    UnknownPrompt(PromptId),
    #[error("failed to persist trial: {0}")]
    Sink(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no sessions to aggregate")]
    Empty,
    #[error("ranked list for {0:?} is not a permutation")]
    NotAPermutation(String),
    #[error("cutoff must be at least 1")]
    ZeroCutoff,
}
