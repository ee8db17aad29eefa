//! Two-stage session-based recommendation with bandit-driven prompt optimization.
//!
//! Stage one ([`reranker`]) narrows a sampled candidate pool down to the items
//! most related to the session. Stage two ([`agents`], [`optimizer`]) ranks the
//! survivors with an LLM and iteratively rewrites the ranking prompt from its
//! own mistakes, choosing which prompt to try next with UCB.

pub mod agents;
pub mod domain;
pub mod error;
pub mod ingest;
pub mod llm;
pub mod metrics;
pub mod optimizer;
pub mod reranker;
pub mod seeding;
