//! Stage-1 relevance filtering.
//!
//! Every candidate is scored against every session item with a pairwise
//! scorer, the pair scores are averaged over the session, and the best
//! `k_filter` candidates survive.

use std::collections::HashMap;
use std::collections::HashSet;

use serde::Serialize;

use crate::domain::{render_item, CandidateKind, CandidateSet, Catalog, Item, Session};
use crate::error::{RerankError, ScorerError};

pub const DEFAULT_K_FILTER: usize = 20;

/// Scores `(session item text, candidate text)` pairs into `[0, 1]`.
///
/// Implementations must be deterministic. Symmetry is not required.
pub trait PairScorer: Send + Sync {
    fn score_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError>;
}

/// Text used when an item is handed to a scorer.
pub fn scoring_text(item: &Item) -> String {
    render_item(item, true)
}

fn checked(scores: Vec<f64>, expected: usize) -> Result<Vec<f64>, ScorerError> {
    if scores.len() != expected {
        return Err(ScorerError::LengthMismatch {
            expected,
            got: scores.len(),
        });
    }
    scores
        .into_iter()
        .map(|s| {
            if (0.0..=1.0).contains(&s) {
                // folds -0.0 into 0.0 so total_cmp orders ties as equal
                Ok(s + 0.0)
            } else {
                Err(ScorerError::OutOfRange(s))
            }
        })
        .collect()
}

pub fn score_pair(scorer: &dyn PairScorer, s: &Item, c: &Item) -> Result<f64, ScorerError> {
    let (a, b) = (scoring_text(s), scoring_text(c));
    Ok(checked(scorer.score_batch(&[(&a, &b)])?, 1)?[0])
}

fn session_items<'a>(session: &Session, catalog: &'a Catalog) -> Result<Vec<&'a Item>, RerankError> {
    if session.interactions.is_empty() {
        return Err(RerankError::EmptySession(session.session_id.clone()));
    }
    session
        .interactions
        .iter()
        .map(|id| catalog.require(id).map_err(RerankError::from))
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean pair score of `candidate` over every session interaction.
pub fn score_candidate(
    scorer: &dyn PairScorer,
    session: &Session,
    candidate: &Item,
    catalog: &Catalog,
) -> Result<f64, RerankError> {
    let texts: Vec<String> = session_items(session, catalog)?.into_iter().map(scoring_text).collect();
    let c = scoring_text(candidate);
    let pairs: Vec<(&str, &str)> = texts.iter().map(|s| (s.as_str(), c.as_str())).collect();
    let scores = checked(scorer.score_batch(&pairs)?, pairs.len())?;
    Ok(mean(&scores))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterDiagnostics {
    pub session_id: String,
    pub target_retained: bool,
    /// 1-based rank of the target among all scored candidates.
    pub target_prefilter_rank: Option<usize>,
    pub target_score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub filtered: CandidateSet,
    pub scores: Vec<f64>,
    pub diagnostics: FilterDiagnostics,
}

/// Orders candidate positions by descending score, ties by ascending position.
pub fn rank_positions(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Keeps the `k_filter` best candidates of `initial`, best first.
///
/// All `|S| x |C|` pairs go to the scorer in a single batch so remote scorers
/// see one request per session. `scores` in the outcome is aligned with
/// `initial.candidates`.
pub fn filter_candidates(
    scorer: &dyn PairScorer,
    session: &Session,
    initial: &CandidateSet,
    k_filter: usize,
    catalog: &Catalog,
) -> Result<FilterOutcome, RerankError> {
    if initial.len() < k_filter || k_filter == 0 {
        return Err(RerankError::TooFewCandidates {
            k_filter,
            available: initial.len(),
        });
    }
    let session_texts: Vec<String> = session_items(session, catalog)?.into_iter().map(scoring_text).collect();
    let candidate_texts: Vec<String> = initial
        .candidates
        .iter()
        .map(|id| catalog.require(id).map(scoring_text))
        .collect::<Result<_, _>>()?;

    let n = session_texts.len();
    let mut pairs = Vec::with_capacity(n * candidate_texts.len());
    for c in &candidate_texts {
        for s in &session_texts {
            pairs.push((s.as_str(), c.as_str()));
        }
    }
    let flat = checked(scorer.score_batch(&pairs)?, pairs.len())?;
    let scores: Vec<f64> = flat.chunks(n).map(mean).collect();

    let order = rank_positions(&scores);
    let kept: Vec<String> = order[..k_filter].iter().map(|&i| initial.candidates[i].clone()).collect();

    let target_pos = initial.candidates.iter().position(|id| *id == session.target);
    let target_prefilter_rank = target_pos.and_then(|p| order.iter().position(|&i| i == p)).map(|r| r + 1);
    let diagnostics = FilterDiagnostics {
        session_id: session.session_id.clone(),
        target_retained: target_prefilter_rank.is_some_and(|r| r <= k_filter),
        target_prefilter_rank,
        target_score: target_pos.map(|p| scores[p]),
    };

    Ok(FilterOutcome {
        filtered: CandidateSet::new(initial.session_id.clone(), kept, CandidateKind::Filtered)?,
        scores,
        diagnostics,
    })
}

fn tokens(text: &str) -> HashSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// The category field of a rendered item line, without the ECO marker.
fn category_field(text: &str) -> Option<String> {
    let field = text.split(" | ").nth(1)?;
    let field = field.trim();
    let field = field.strip_suffix(crate::domain::ECO_TOKEN).unwrap_or(field).trim();
    (!field.is_empty()).then(|| field.to_lowercase())
}

/// Dependency-free reference scorer.
///
/// `0.75 * jaccard(tokens) + 0.25 * [same category]`, where tokens are the
/// lowercased alphanumeric runs of the rendered text and the category is the
/// second ` | `-separated field.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl LexicalScorer {
    pub const TOKEN_WEIGHT: f64 = 0.75;
    pub const CATEGORY_WEIGHT: f64 = 0.25;

    pub fn score(&self, a: &str, b: &str) -> f64 {
        let (ta, tb) = (tokens(a), tokens(b));
        let union = ta.union(&tb).count();
        let jaccard = if union == 0 {
            0.0
        } else {
            ta.intersection(&tb).count() as f64 / union as f64
        };
        let same_category = match (category_field(a), category_field(b)) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        };
        Self::TOKEN_WEIGHT * jaccard + if same_category { Self::CATEGORY_WEIGHT } else { 0.0 }
    }
}

impl PairScorer for LexicalScorer {
    fn score_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        Ok(pairs.iter().map(|(a, b)| self.score(a, b)).collect())
    }
}

/// Scores looked up from a `(session text, candidate text)` table.
///
/// Missing pairs get `default`. Meant for scripted experiments and tests.
#[derive(Debug, Clone, Default)]
pub struct TableScorer {
    pub table: HashMap<(String, String), f64>,
    pub default: f64,
}

impl TableScorer {
    pub fn insert(&mut self, s: impl Into<String>, c: impl Into<String>, score: f64) {
        self.table.insert((s.into(), c.into()), score);
    }
}

impl PairScorer for TableScorer {
    fn score_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        Ok(pairs
            .iter()
            .map(|(s, c)| {
                self.table
                    .get(&(s.to_string(), c.to_string()))
                    .copied()
                    .unwrap_or(self.default)
            })
            .collect())
    }
}

#[cfg(feature = "http")]
pub use remote::RemoteScorer;

#[cfg(feature = "http")]
mod remote {
    use std::time::Duration;

    use serde::{Deserialize, Serialize};

    use super::PairScorer;
    use crate::error::ScorerError;

    /// Posts `{"pairs":[[s,c],...]}` to a scoring service and reads
    /// `{"scores":[...]}` back.
    pub struct RemoteScorer {
        endpoint: String,
        client: reqwest::blocking::Client,
    }

    #[derive(Serialize)]
    struct Request<'a> {
        pairs: Vec<[&'a str; 2]>,
    }

    #[derive(Deserialize)]
    struct Response {
        scores: Vec<f64>,
    }

    impl RemoteScorer {
        pub fn new(endpoint: impl Into<String>, timeout_ms: u64) -> Result<Self, ScorerError> {
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_millis(timeout_ms))
                .build()
                .map_err(|e| ScorerError::Failure(e.to_string()))?;
            Ok(Self {
                endpoint: endpoint.into(),
                client,
            })
        }
    }

    impl PairScorer for RemoteScorer {
        fn score_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
            let body = Request {
                pairs: pairs.iter().map(|(s, c)| [*s, *c]).collect(),
            };
            let resp = self
                .client
                .post(&self.endpoint)
                .json(&body)
                .send()
                .map_err(|e| ScorerError::Failure(e.to_string()))?;
            let status = resp.status();
            if !status.is_success() {
                return Err(ScorerError::Failure(format!("HTTP {}", status.as_u16())));
            }
            let parsed: Response = resp.json().map_err(|e| ScorerError::Failure(e.to_string()))?;
            Ok(parsed.scores)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Item;
    use proptest::prelude::*;

    fn cat(items: Vec<Item>) -> Catalog {
        Catalog::new(items).unwrap()
    }

    #[test]
    fn lexical_identical_items() {
        let a = Item::new("a", "Bamboo Brush", "Home").sustainable(true);
        assert_eq!(score_pair(&LexicalScorer, &a, &a).unwrap(), 1.0);
    }

    #[test]
    fn lexical_disjoint_items() {
        let a = Item::new("a", "Bamboo Brush", "Home");
        let b = Item::new("b", "Racing Wheel", "Games");
        assert_eq!(score_pair(&LexicalScorer, &a, &b).unwrap(), 0.0);
    }

    #[test]
    fn lexical_hand_evaluated_pair() {
        // tokens {bamboo, brush, home} vs {bamboo, comb, home}: 2 shared of 4
        // -> 0.75 * 0.5 + 0.25 (same category) = 0.625
        let got = LexicalScorer.score("Bamboo Brush | Home", "Bamboo Comb | Home");
        assert!((got - 0.625).abs() < 1e-15);
        let a = Item::new("a", "Bamboo Brush", "Home");
        let b = Item::new("b", "Bamboo Comb", "Home");
        assert!((score_pair(&LexicalScorer, &a, &b).unwrap() - 0.625).abs() < 1e-15);
    }

    #[test]
    fn lexical_category_ignores_eco_marker() {
        assert_eq!(category_field("Brush | Home [ECO]").as_deref(), Some("home"));
        assert_eq!(category_field("Pad | Games | brand=X [ECO]").as_deref(), Some("games"));
        assert_eq!(category_field("Lonely"), None);
    }

    fn scripted(session: &[&str], candidate: &str, values: &[f64]) -> (TableScorer, Catalog, Session, Item) {
        let mut items: Vec<Item> = session.iter().map(|id| Item::new(*id, format!("T{id}"), "c")).collect();
        let c = Item::new(candidate, format!("T{candidate}"), "c");
        items.push(c.clone());
        let mut scorer = TableScorer::default();
        for (id, v) in session.iter().zip(values) {
            let s = items.iter().find(|i| i.id == *id).unwrap();
            scorer.insert(scoring_text(s), scoring_text(&c), *v);
        }
        let catalog = cat(items);
        let sess = Session::new("s", session.iter().map(|s| s.to_string()).collect(), candidate);
        (scorer, catalog, sess, c)
    }

    #[test]
    fn score_candidate_single_item_equals_pair() {
        let (scorer, catalog, session, c) = scripted(&["x"], "y", &[0.37]);
        let pair = score_pair(&scorer, catalog.get("x").unwrap(), &c).unwrap();
        assert_eq!(score_candidate(&scorer, &session, &c, &catalog).unwrap(), pair);
    }

    #[test]
    fn score_candidate_averages() {
        let (scorer, catalog, session, c) = scripted(&["x", "z"], "y", &[0.8, 0.4]);
        assert!((score_candidate(&scorer, &session, &c, &catalog).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_scores_are_rejected() {
        let (mut scorer, catalog, session, c) = scripted(&["x"], "y", &[0.5]);
        scorer.default = 1.5;
        scorer.table.clear();
        assert!(matches!(
            score_candidate(&scorer, &session, &c, &catalog),
            Err(RerankError::Scorer(ScorerError::OutOfRange(_)))
        ));
    }

    fn uniform_fixture(n: usize) -> (Catalog, Session, CandidateSet) {
        let items: Vec<Item> = (0..n).map(|i| Item::new(format!("c{i}"), format!("Item {i}"), "k")).collect();
        let catalog = cat(items);
        let session = Session::new("s", vec!["c0".into()], "c5");
        let initial = CandidateSet::new("s", (0..n).map(|i| format!("c{i}")).collect(), CandidateKind::Initial).unwrap();
        (catalog, session, initial)
    }

    #[test]
    fn equal_scores_keep_input_order() {
        let (catalog, session, initial) = uniform_fixture(30);
        let scorer = TableScorer {
            default: 0.5,
            ..Default::default()
        };
        let out = filter_candidates(&scorer, &session, &initial, 20, &catalog).unwrap();
        assert_eq!(out.filtered.candidates, initial.candidates[..20].to_vec());
        assert_eq!(out.filtered.kind, CandidateKind::Filtered);
        assert!(out.diagnostics.target_retained);
        assert_eq!(out.diagnostics.target_prefilter_rank, Some(6));
    }

    #[test]
    fn target_below_cutoff_is_lost() {
        let (catalog, session, initial) = uniform_fixture(30);
        let mut scorer = TableScorer {
            default: 0.9,
            ..Default::default()
        };
        let s_text = scoring_text(catalog.get("c0").unwrap());
        scorer.insert(s_text, scoring_text(catalog.get("c5").unwrap()), 0.1);
        let out = filter_candidates(&scorer, &session, &initial, 20, &catalog).unwrap();
        assert!(!out.diagnostics.target_retained);
        assert_eq!(out.diagnostics.target_prefilter_rank, Some(30));
        assert!(!out.filtered.contains("c5"));
    }

    #[test]
    fn too_few_candidates() {
        let (catalog, session, initial) = uniform_fixture(10);
        assert!(matches!(
            filter_candidates(&LexicalScorer, &session, &initial, 20, &catalog),
            Err(RerankError::TooFewCandidates { .. })
        ));
    }

    /// Brute-force oracle: materialise (score, position) pairs and sort them.
    fn oracle_top_k(scores: &[f64], k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = scores.iter().copied().zip(0..).collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    #[test]
    fn hundred_distinct_scores_match_full_sort() {
        let (catalog, session, initial) = uniform_fixture(100);
        let s_text = scoring_text(catalog.get("c0").unwrap());
        let mut scorer = TableScorer::default();
        let mut scores = Vec::new();
        for i in 0..100 {
            // distinct values in a scrambled order
            let v = ((i * 37) % 100) as f64 / 100.0;
            scores.push(v);
            scorer.insert(s_text.clone(), scoring_text(catalog.get(&format!("c{i}")).unwrap()), v);
        }
        let out = filter_candidates(&scorer, &session, &initial, 20, &catalog).unwrap();
        let expected: Vec<String> = oracle_top_k(&scores, 20).into_iter().map(|i| format!("c{i}")).collect();
        assert_eq!(out.filtered.candidates, expected);
    }

    proptest! {
        #[test]
        fn filter_matches_oracle(values in proptest::collection::vec(0u8..6, 25)) {
            let (catalog, session, initial) = uniform_fixture(25);
            let s_text = scoring_text(catalog.get("c0").unwrap());
            let mut scorer = TableScorer::default();
            let scores: Vec<f64> = values.iter().map(|v| *v as f64 / 5.0).collect();
            for (i, v) in scores.iter().enumerate() {
                scorer.insert(s_text.clone(), scoring_text(catalog.get(&format!("c{i}")).unwrap()), *v);
            }
            let out = filter_candidates(&scorer, &session, &initial, 10, &catalog).unwrap();
            let expected: Vec<String> = oracle_top_k(&scores, 10).into_iter().map(|i| format!("c{i}")).collect();
            prop_assert_eq!(&out.filtered.candidates, &expected);
            let distinct: HashSet<_> = out.filtered.candidates.iter().collect();
            prop_assert_eq!(distinct.len(), 10);
        }

        #[test]
        fn raising_scores_never_lowers_rank(values in proptest::collection::vec(0u8..10, 12), who in 0usize..12, bump in 1u8..10) {
            let (catalog, _, initial) = uniform_fixture(12);
            let session = Session::new("s", vec!["c0".into(), "c1".into()], "c3");
            let texts: Vec<String> = (0..12).map(|i| scoring_text(catalog.get(&format!("c{i}")).unwrap())).collect();
            let build = |boost: f64| {
                let mut scorer = TableScorer::default();
                for (i, v) in values.iter().enumerate() {
                    let mut v = *v as f64 / 20.0;
                    if i == who { v += boost; }
                    scorer.insert(texts[0].clone(), texts[i].clone(), v);
                    scorer.insert(texts[1].clone(), texts[i].clone(), v / 2.0);
                }
                scorer
            };
            let before = filter_candidates(&build(0.0), &session, &initial, 12, &catalog).unwrap();
            let after = filter_candidates(&build(bump as f64 / 20.0), &session, &initial, 12, &catalog).unwrap();
            let id = format!("c{who}");
            let rank = |c: &CandidateSet| c.candidates.iter().position(|x| *x == id).unwrap();
            prop_assert!(rank(&after.filtered) <= rank(&before.filtered));
        }
    }
}
