//! Core data types shared across the pipeline.
//!
//! Everything here is immutable once constructed and cheap to share between
//! worker threads.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::DomainError;

/// Token appended to a rendered item when it is flagged as sustainable.
pub const ECO_TOKEN: &str = "[ECO]";

/// Opaque catalog identifier.
pub type ItemId = String;

/// A product record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    pub title: String,
    pub category: String,
    /// Attribute order is preserved from the source record.
    #[serde(default)]
    pub attributes: Vec<(String, String)>,
    #[serde(default)]
    pub sustainable: bool,
}

impl Item {
    pub fn new(id: impl Into<String>, title: impl Into<String>, category: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            category: category.into(),
            attributes: Vec::new(),
            sustainable: false,
        }
    }

    pub fn with_attribute(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.push((key.into(), value.into()));
        self
    }

    pub fn sustainable(mut self, flag: bool) -> Self {
        self.sustainable = flag;
        self
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.id.is_empty() {
            return Err(DomainError::EmptyItemId);
        }
        if self.title.is_empty() {
            return Err(DomainError::EmptyTitle(self.id.clone()));
        }
        Ok(())
    }
}

/// Renders an item as a single prompt/scoring line.
///
/// Layout is `<title> | <category> | k1=v1; k2=v2 [ECO]`. The attribute
/// segment is omitted when there are no attributes, and the ECO token only
/// appears when `include_green` is set and the item is sustainable.
pub fn render_item(item: &Item, include_green: bool) -> String {
    let mut out = String::with_capacity(item.title.len() + item.category.len() + 16);
    out.push_str(&item.title);
    out.push_str(" | ");
    out.push_str(&item.category);
    if !item.attributes.is_empty() {
        out.push_str(" | ");
        for (i, (k, v)) in item.attributes.iter().enumerate() {
            if i > 0 {
                out.push_str("; ");
            }
            out.push_str(k);
            out.push('=');
            out.push_str(v);
        }
    }
    if include_green && item.sustainable {
        out.push(' ');
        out.push_str(ECO_TOKEN);
    }
    out
}

/// Ordered item collection with an id index.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    items: Vec<Item>,
    index: HashMap<ItemId, usize>,
}

impl Catalog {
    pub fn new(items: Vec<Item>) -> Result<Self, DomainError> {
        let mut catalog = Catalog {
            items: Vec::with_capacity(items.len()),
            index: HashMap::with_capacity(items.len()),
        };
        for item in items {
            catalog.push(item)?;
        }
        Ok(catalog)
    }

    pub fn push(&mut self, item: Item) -> Result<(), DomainError> {
        item.validate()?;
        if self.index.contains_key(&item.id) {
            return Err(DomainError::DuplicateId(item.id));
        }
        self.index.insert(item.id.clone(), self.items.len());
        self.items.push(item);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Looks up an id that is expected to resolve.
    pub fn require(&self, id: &str) -> Result<&Item, DomainError> {
        self.get(id).ok_or_else(|| DomainError::UnknownItem(id.to_string()))
    }
}

/// A chronological interaction sequence with its held-out target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub interactions: Vec<ItemId>,
    pub target: ItemId,
}

impl Session {
    pub fn new(session_id: impl Into<String>, interactions: Vec<ItemId>, target: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            interactions,
            target: target.into(),
        }
    }

    pub fn validate(&self, catalog: &Catalog) -> Result<(), DomainError> {
        if self.interactions.is_empty() {
            return Err(DomainError::EmptySession(self.session_id.clone()));
        }
        for id in self.interactions.iter().chain(std::iter::once(&self.target)) {
            if !catalog.contains(id) {
                return Err(DomainError::UnknownSessionItem {
                    session_id: self.session_id.clone(),
                    item_id: id.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateKind {
    Initial,
    Filtered,
}

/// A pool of candidate ids for one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub session_id: String,
    pub candidates: Vec<ItemId>,
    pub kind: CandidateKind,
}

impl CandidateSet {
    pub fn new(session_id: impl Into<String>, candidates: Vec<ItemId>, kind: CandidateKind) -> Result<Self, DomainError> {
        let set = Self {
            session_id: session_id.into(),
            candidates,
            kind,
        };
        set.check_distinct()?;
        Ok(set)
    }

    fn check_distinct(&self) -> Result<(), DomainError> {
        let mut seen = std::collections::HashSet::with_capacity(self.candidates.len());
        for id in &self.candidates {
            if !seen.insert(id.as_str()) {
                return Err(DomainError::DuplicateCandidate {
                    session_id: self.session_id.clone(),
                    item_id: id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.candidates.iter().any(|c| c == id)
    }
}

/// A full ordering over a candidate set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    pub session_id: String,
    pub order: Vec<ItemId>,
    /// Set when the parser had to drop or append entries.
    pub repaired: bool,
}

impl RankedList {
    /// 1-based position of `id`, or `None` if absent.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.order.iter().position(|x| x == id).map(|p| p + 1)
    }

    /// Checks that `order` is a permutation of `candidates`.
    pub fn is_permutation_of(&self, candidates: &[ItemId]) -> bool {
        if self.order.len() != candidates.len() {
            return false;
        }
        let mut a: Vec<&str> = self.order.iter().map(String::as_str).collect();
        let mut b: Vec<&str> = candidates.iter().map(String::as_str).collect();
        a.sort_unstable();
        b.sort_unstable();
        a == b
    }

    pub fn has_duplicates(&self) -> bool {
        let mut seen = std::collections::HashSet::with_capacity(self.order.len());
        !self.order.iter().all(|id| seen.insert(id.as_str()))
    }
}

/// Prompt identifier, assigned monotonically as prompts enter the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptId(pub u32);

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptOrigin {
    Seed,
    Refined,
    Variant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: PromptId,
    pub parent: Option<PromptId>,
    pub origin: PromptOrigin,
    pub text: String,
}

impl Prompt {
    pub fn seed(id: PromptId, text: impl Into<String>) -> Self {
        Self {
            id,
            parent: None,
            origin: PromptOrigin::Seed,
            text: text.into(),
        }
    }
}

/// Bandit accounting for one prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptStats {
    pub reward_sum: f64,
    pub pull_count: u64,
}

impl PromptStats {
    /// Records one pull. Rewards are clamped into `[0, 1]`.
    pub fn record(&mut self, reward: f64) {
        self.reward_sum += reward.clamp(0.0, 1.0);
        self.pull_count += 1;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.pull_count > 0).then(|| self.reward_sum / self.pull_count as f64)
    }
}
