//! Next-item ranking metrics with a single relevant item per session.
//!
//! With one relevant item the ideal DCG is 1, so NDCG@K reduces to
//! `1 / log2(rank + 1)` when the target is inside the top K and 0 otherwise.
//! At K = 1 this coincides with HR@1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{Catalog, ItemId, RankedList};
use crate::error::MetricsError;

pub const DEFAULT_CUTOFFS: [usize; 2] = [1, 5];

/// Gain of a hit at 1-based `rank`.
pub fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

pub fn hr_at_k(ranked: &RankedList, target: &str, k: usize) -> f64 {
    match ranked.rank_of(target) {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    }
}

pub fn ndcg_at_k(ranked: &RankedList, target: &str, k: usize) -> f64 {
    match ranked.rank_of(target) {
        Some(r) if r <= k => discount(r),
        _ => 0.0,
    }
}

/// Fraction of the top `k` ranked items flagged sustainable in the catalog.
pub fn green_share_at_k(ranked: &RankedList, catalog: &Catalog, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let top = &ranked.order[..k.min(ranked.order.len())];
    let green = top
        .iter()
        .filter(|id| catalog.get(id).is_some_and(|i| i.sustainable))
        .count();
    green as f64 / k as f64
}

/// What happened to one evaluated session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub session_id: String,
    pub target: ItemId,
    /// `None` when the backend failed for this session.
    pub ranked: Option<RankedList>,
    /// Whether the target survived stage-1 filtering.
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRow {
    pub session_id: String,
    pub target: ItemId,
    pub target_rank: Option<usize>,
    pub retained: bool,
    pub failed: bool,
    pub repaired: bool,
    pub target_sustainable: bool,
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub green_share: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenTargetMetrics {
    pub n_sessions: usize,
    pub at: BTreeMap<usize, CutoffMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_sessions: usize,
    pub at: BTreeMap<usize, CutoffMetrics>,
    pub target_retention_rate: f64,
    pub failure_rate: f64,
    pub repair_rate: f64,
    /// Averaged over sessions that produced a ranking.
    pub green_share: BTreeMap<usize, f64>,
    /// Restricted to sessions whose target is sustainable; absent if none are.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub green_target: Option<GreenTargetMetrics>,
    #[serde(skip)]
    pub rows: Vec<SessionRow>,
}

fn row_for(outcome: &SessionOutcome, catalog: &Catalog, cutoffs: &[usize]) -> Result<SessionRow, MetricsError> {
    if let Some(r) = &outcome.ranked {
        if r.has_duplicates() {
            return Err(MetricsError::NotAPermutation(outcome.session_id.clone()));
        }
    }
    let per_k = |f: &dyn Fn(&RankedList, usize) -> f64| -> BTreeMap<usize, f64> {
        cutoffs
            .iter()
            .map(|&k| (k, outcome.ranked.as_ref().map_or(0.0, |r| f(r, k))))
            .collect()
    };
    Ok(SessionRow {
        session_id: outcome.session_id.clone(),
        target: outcome.target.clone(),
        target_rank: outcome.ranked.as_ref().and_then(|r| r.rank_of(&outcome.target)),
        retained: outcome.retained,
        failed: outcome.ranked.is_none(),
        repaired: outcome.ranked.as_ref().is_some_and(|r| r.repaired),
        target_sustainable: catalog.get(&outcome.target).is_some_and(|i| i.sustainable),
        hr: per_k(&|r, k| hr_at_k(r, &outcome.target, k)),
        ndcg: per_k(&|r, k| ndcg_at_k(r, &outcome.target, k)),
        green_share: per_k(&|r, k| green_share_at_k(r, catalog, k)),
    })
}

fn mean_at(rows: &[&SessionRow], cutoffs: &[usize]) -> BTreeMap<usize, CutoffMetrics> {
    let n = rows.len() as f64;
    cutoffs
        .iter()
        .map(|&k| {
            let hr = rows.iter().map(|r| r.hr[&k]).sum::<f64>() / n;
            let ndcg = rows.iter().map(|r| r.ndcg[&k]).sum::<f64>() / n;
            (k, CutoffMetrics { hr, ndcg })
        })
        .collect()
}

/// Averages per-session outcomes into a report.
///
/// Failed sessions and sessions whose target was filtered out score 0 and
/// stay in the denominator.
pub fn aggregate(outcomes: &[SessionOutcome], catalog: &Catalog, cutoffs: &[usize]) -> Result<MetricsReport, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::Empty);
    }
    if cutoffs.contains(&0) {
        return Err(MetricsError::ZeroCutoff);
    }
    let mut cutoffs = cutoffs.to_vec();
    cutoffs.sort_unstable();
    cutoffs.dedup();

    let rows = outcomes
        .iter()
        .map(|o| row_for(o, catalog, &cutoffs))
        .collect::<Result<Vec<_>, _>>()?;
    let n = rows.len() as f64;
    let all: Vec<&SessionRow> = rows.iter().collect();
    let ranked: Vec<&SessionRow> = rows.iter().filter(|r| !r.failed).collect();
    let green: Vec<&SessionRow> = rows.iter().filter(|r| r.target_sustainable).collect();

    let green_share = cutoffs
        .iter()
        .map(|&k| {
            let v = if ranked.is_empty() {
                0.0
            } else {
                ranked.iter().map(|r| r.green_share[&k]).sum::<f64>() / ranked.len() as f64
            };
            (k, v)
        })
        .collect();

    Ok(MetricsReport {
        n_sessions: rows.len(),
        at: mean_at(&all, &cutoffs),
        target_retention_rate: rows.iter().filter(|r| r.retained).count() as f64 / n,
        failure_rate: rows.iter().filter(|r| r.failed).count() as f64 / n,
        repair_rate: rows.iter().filter(|r| r.repaired).count() as f64 / n,
        green_share,
        green_target: (!green.is_empty()).then(|| GreenTargetMetrics {
            n_sessions: green.len(),
            at: mean_at(&green, &cutoffs),
        }),
        rows,
    })
}
