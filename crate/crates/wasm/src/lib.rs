//! wasm-bindgen exports for the static demo page in `www/`.
//!
//! Every export takes plain numbers or strings and returns a JSON string, so
//! the page needs no bundler or generated typings.

use greenrec::agents::{ucb_value, Agents};
use greenrec::domain::{CandidateKind, CandidateSet, Catalog, Item, PromptStats, Session};
use greenrec::llm::{MockBackend, MockScript};
use greenrec::optimizer::{optimize, OptimizerConfig, TrainExample};
use greenrec::reranker::{filter_candidates, LexicalScorer};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct BanditRun {
    /// Cumulative pulls per prompt after each trial.
    pulls: Vec<[u64; 2]>,
    /// Batch-mean reward of each trial.
    rewards: Vec<f64>,
    means: [Option<f64>; 2],
    best: u32,
}

fn toy_world(n_sessions: usize) -> (Catalog, Vec<TrainExample>) {
    let catalog = Catalog::new((0..40).map(|i| Item::new(format!("i{i}"), format!("Item {i}"), "c")).collect())
        .expect("distinct ids");
    let train = (0..n_sessions)
        .map(|s| TrainExample {
            session: Session::new(format!("s{s}"), vec![format!("i{}", 20 + s % 20)], format!("i{}", (s * 7) % 20)),
            candidates: CandidateSet::new(format!("s{s}"), (0..20).map(|i| format!("i{i}")).collect(), CandidateKind::Filtered)
                .expect("distinct ids"),
        })
        .collect();
    (catalog, train)
}

/// Two prompts rigged at qualities `qa` and `qb` compete for `trials` pulls.
pub fn bandit_json(qa: f64, qb: f64, trials: usize, c: f64, seed: u64) -> Result<String, String> {
    if !(1..=2000).contains(&trials) {
        return Err("trials must be in 1..=2000".into());
    }
    let (catalog, train) = toy_world(64);
    let mock = MockBackend::new(MockScript {
        seed,
        ..Default::default()
    })
    .with_targets(train.iter().map(|e| &e.session));
    let mut cfg = OptimizerConfig::with_trials(trials);
    cfg.c = c;
    cfg.seed = seed;
    cfg.batch_size = 8;
    let seeds = vec![
        format!("{{{{q={qa}}}}} A {{session}} {{candidates}}"),
        format!("{{{{q={qb}}}}} B {{session}} {{candidates}}"),
    ];
    let result = optimize(cfg, &seeds, train, Agents::new(&mock, &catalog), 1).map_err(|e| e.to_string())?;

    let mut counts = [0u64; 2];
    let mut pulls = Vec::with_capacity(result.trials.len());
    for t in &result.trials {
        counts[(t.prompt_id.0 - 1) as usize] += 1;
        pulls.push(counts);
    }
    let mean = |i: usize| result.pool.get(i).and_then(|e| e.stats.mean());
    let run = BanditRun {
        pulls,
        rewards: result.trials.iter().map(|t| t.mean_reward).collect(),
        means: [mean(0), mean(1)],
        best: result.best_prompt.id.0,
    };
    serde_json::to_string(&run).map_err(|e| e.to_string())
}

/// `title | category` with an optional trailing `[ECO]`.
fn parse_item(id: String, line: &str) -> Item {
    let line = line.trim();
    let (line, green) = match line.strip_suffix("[ECO]") {
        Some(rest) => (rest.trim_end(), true),
        None => (line, false),
    };
    let (title, category) = line.split_once('|').unwrap_or((line, ""));
    Item::new(id, title.trim(), category.trim()).sustainable(green)
}

fn non_empty(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty())
}

#[derive(Serialize)]
struct RerankRow {
    line: usize,
    title: String,
    score: f64,
    kept: bool,
}

/// Scores each candidate line against the session lines and marks the top `k`.
pub fn rerank_json(session: &str, candidates: &str, k: usize) -> Result<String, String> {
    let mut items = Vec::new();
    let mut history = Vec::new();
    for (i, line) in non_empty(session).enumerate() {
        history.push(format!("s{i}"));
        items.push(parse_item(format!("s{i}"), line));
    }
    let mut cands = Vec::new();
    for (i, line) in non_empty(candidates).enumerate() {
        cands.push(format!("c{i}"));
        items.push(parse_item(format!("c{i}"), line));
    }
    if history.is_empty() || cands.is_empty() {
        return Err("enter at least one session item and one candidate".into());
    }
    let k = k.clamp(1, cands.len());
    let catalog = Catalog::new(items).map_err(|e| e.to_string())?;
    let target = cands[0].clone();
    let sess = Session::new("demo", history, target);
    let initial = CandidateSet::new("demo", cands, CandidateKind::Initial).map_err(|e| e.to_string())?;
    let outcome = filter_candidates(&LexicalScorer, &sess, &initial, k, &catalog).map_err(|e| e.to_string())?;

    let mut rows: Vec<RerankRow> = initial
        .candidates
        .iter()
        .zip(&outcome.scores)
        .enumerate()
        .map(|(i, (id, &score))| RerankRow {
            line: i + 1,
            title: catalog.get(id).map(|it| it.title.clone()).unwrap_or_default(),
            score,
            kept: outcome.filtered.contains(id),
        })
        .collect();
    let rank: Vec<usize> = outcome
        .filtered
        .candidates
        .iter()
        .map(|id| initial.candidates.iter().position(|c| c == id).expect("kept ids come from the input"))
        .collect();
    rows.sort_by_key(|r| rank.iter().position(|&p| p + 1 == r.line).unwrap_or(usize::MAX));
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct UcbPoint {
    t: u64,
    value: f64,
    bonus: f64,
}

/// UCB of a prompt with fixed stats as the trial counter grows.
pub fn ucb_json(reward_sum: f64, pulls: u64, t_max: u64, c: f64) -> Result<String, String> {
    if pulls == 0 {
        return Err("an unpulled prompt has infinite value; use pulls >= 1".into());
    }
    if !(0.0..=pulls as f64).contains(&reward_sum) {
        return Err("reward_sum must lie in 0..=pulls".into());
    }
    let stats = PromptStats {
        reward_sum,
        pull_count: pulls,
    };
    let mean = reward_sum / pulls as f64;
    let points: Vec<UcbPoint> = (1..=t_max.clamp(1, 100_000))
        .map(|t| {
            let value = ucb_value(&stats, t, c);
            UcbPoint { t, value, bonus: value - mean }
        })
        .collect();
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn simulate_bandit(qa: f64, qb: f64, trials: usize, c: f64, seed: u32) -> Result<String, JsError> {
    bandit_json(qa, qb, trials, c, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn rerank(session: &str, candidates: &str, k: usize) -> Result<String, JsError> {
    rerank_json(session, candidates, k).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn ucb_curve(reward_sum: f64, pulls: u32, t_max: u32, c: f64) -> Result<String, JsError> {
    ucb_json(reward_sum, pulls as u64, t_max as u64, c).map_err(|e| JsError::new(&e))
}
