//! The closed optimization loop.
//!
//! Each trial selects one prompt by UCB, ranks a batch of training sessions
//! with it, credits the batch-mean reward to that prompt as a single pull,
//! and feeds up to `errors_per_trial` failures through
//! InferReason → RefinePrompt → Augment. New prompts join the pool with zero
//! stats; when the pool is full, the weakest well-tested prompt is retired.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::agents::{detect_error, has_placeholders, select_prompt, Agents, ErrorCase};
use crate::domain::{CandidateSet, Prompt, PromptId, PromptOrigin, PromptStats, RankedList, Session};
use crate::error::{AgentError, OptimizerError};
use crate::llm::map_bounded;
use crate::metrics::discount;
use crate::seeding::keyed_rng;

/// Consecutive all-failed trials after which the loop gives up.
pub const ABORT_AFTER_FAILED_TRIALS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `1 / log2(rank + 1)` over the full list, 0 when the target is missing.
    #[default]
    NdcgFull,
    /// 1 when the target is within the error threshold.
    HitAtThreshold,
}

/// Per-session reward in `[0, 1]`.
pub fn reward(ranked: &RankedList, target: &str, mode: RewardMode, threshold: usize) -> f64 {
    match (mode, ranked.rank_of(target)) {
        (_, None) => 0.0,
        (RewardMode::NdcgFull, Some(rank)) => discount(rank),
        (RewardMode::HitAtThreshold, Some(rank)) => {
            if rank <= threshold {
                1.0
            } else {
                0.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_trials: usize,
    #[serde(default = "OptimizerConfig::default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "OptimizerConfig::default_error_threshold")]
    pub error_threshold: usize,
    #[serde(default = "OptimizerConfig::default_errors_per_trial")]
    pub errors_per_trial: usize,
    #[serde(default = "OptimizerConfig::default_n_variants")]
    pub n_variants: usize,
    #[serde(default = "OptimizerConfig::default_pool_max")]
    pub pool_max: usize,
    #[serde(default = "OptimizerConfig::default_min_pulls")]
    pub min_pulls_for_best: u64,
    #[serde(default)]
    pub reward_mode: RewardMode,
    /// UCB exploration weight.
    #[serde(default = "OptimizerConfig::default_c")]
    pub c: f64,
    #[serde(default)]
    pub seed: u64,
}

impl OptimizerConfig {
    fn default_batch_size() -> usize {
        16
    }
    fn default_error_threshold() -> usize {
        crate::agents::DEFAULT_ERROR_THRESHOLD
    }
    fn default_errors_per_trial() -> usize {
        2
    }
    fn default_n_variants() -> usize {
        3
    }
    fn default_pool_max() -> usize {
        12
    }
    fn default_min_pulls() -> u64 {
        3
    }
    fn default_c() -> f64 {
        std::f64::consts::SQRT_2
    }

    pub fn with_trials(max_trials: usize) -> Self {
        Self {
            max_trials,
            batch_size: Self::default_batch_size(),
            error_threshold: Self::default_error_threshold(),
            errors_per_trial: Self::default_errors_per_trial(),
            n_variants: Self::default_n_variants(),
            pool_max: Self::default_pool_max(),
            min_pulls_for_best: Self::default_min_pulls(),
            reward_mode: RewardMode::default(),
            c: Self::default_c(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let positive = [
            ("max_trials", self.max_trials),
            ("batch_size", self.batch_size),
            ("error_threshold", self.error_threshold),
            ("errors_per_trial", self.errors_per_trial),
            ("min_pulls_for_best", self.min_pulls_for_best as usize),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(OptimizerError::Config(format!("{name} must be positive")));
        }
        if !(3..=5).contains(&self.n_variants) {
            return Err(OptimizerError::Config("n_variants must be in 3..=5".into()));
        }
        if self.pool_max < 2 {
            return Err(OptimizerError::Config("pool_max must be at least 2".into()));
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(OptimizerError::Config("c must be a non-negative number".into()));
        }
        Ok(())
    }
}

/// A training session paired with its filtered candidates.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub session: Session,
    pub candidates: CandidateSet,
}

impl TrainExample {
    /// Pairs every session with its filtered set, keyed by session id.
    pub fn pair(sessions: &[Session], filtered: &[CandidateSet]) -> Result<Vec<Self>, OptimizerError> {
        let by_id: HashMap<&str, &CandidateSet> = filtered.iter().map(|c| (c.session_id.as_str(), c)).collect();
        sessions
            .iter()
            .map(|s| {
                let c = by_id
                    .get(s.session_id.as_str())
                    .ok_or_else(|| OptimizerError::MissingCandidates(s.session_id.clone()))?;
                Ok(TrainExample {
                    session: s.clone(),
                    candidates: (*c).clone(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub session_id: String,
    pub target_rank: Option<usize>,
    pub reward: f64,
    pub failed: bool,
    pub repaired: bool,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub prompt_id: PromptId,
    pub sessions: Vec<SessionResult>,
    pub mean_reward: f64,
    pub errors_flagged: usize,
    pub prompts_added: Vec<PromptId>,
    #[serde(default)]
    pub evicted: Vec<PromptId>,
    #[serde(default)]
    pub chain_errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub prompt: Prompt,
    pub stats: PromptStats,
    /// False once evicted; the stats are kept for accounting.
    pub active: bool,
}

/// Every prompt ever admitted, with its bandit accounting.
#[derive(Debug, Clone, Default)]
pub struct PromptPool {
    entries: BTreeMap<PromptId, PoolEntry>,
}

impl PromptPool {
    pub fn entries(&self) -> impl Iterator<Item = &PoolEntry> {
        self.entries.values()
    }

    pub fn get(&self, id: PromptId) -> Option<&PoolEntry> {
        self.entries.get(&id)
    }

    pub fn active_len(&self) -> usize {
        self.entries.values().filter(|e| e.active).count()
    }

    pub fn active_stats(&self) -> BTreeMap<PromptId, PromptStats> {
        self.entries
            .iter()
            .filter(|(_, e)| e.active)
            .map(|(id, e)| (*id, e.stats))
            .collect()
    }

    pub fn next_id(&self) -> PromptId {
        PromptId(self.entries.keys().next_back().map_or(1, |id| id.0 + 1))
    }

    pub fn find_text(&self, text: &str) -> Option<PromptId> {
        self.entries.values().find(|e| e.prompt.text == text).map(|e| e.prompt.id)
    }

    pub fn total_pulls(&self) -> u64 {
        self.entries.values().map(|e| e.stats.pull_count).sum()
    }

    fn admit(&mut self, prompt: Prompt) {
        self.entries.insert(
            prompt.id,
            PoolEntry {
                prompt,
                stats: PromptStats::default(),
                active: true,
            },
        );
    }

    /// The retirement candidate: lowest mean among active prompts with at
    /// least `min_pulls` pulls, excluding `incumbent`. Ties retire the newest.
    fn eviction_candidate(&self, incumbent: PromptId, min_pulls: u64) -> Option<PromptId> {
        self.entries
            .values()
            .filter(|e| e.active && e.prompt.id != incumbent && e.stats.pull_count >= min_pulls.max(1))
            .min_by(|a, b| {
                let (ma, mb) = (a.stats.mean().unwrap_or(0.0), b.stats.mean().unwrap_or(0.0));
                ma.total_cmp(&mb).then(b.prompt.id.cmp(&a.prompt.id))
            })
            .map(|e| e.prompt.id)
    }

    /// Best prompt by mean reward among those pulled at least `min_pulls`
    /// times, falling back to any pulled prompt, then to the oldest prompt.
    pub fn best(&self, min_pulls: u64) -> Option<&PoolEntry> {
        let pick = |floor: u64| {
            self.entries
                .values()
                .filter(|e| e.stats.pull_count >= floor.max(1))
                .fold(None::<&PoolEntry>, |best, e| match best {
                    Some(b) if b.stats.mean() >= e.stats.mean() => Some(b),
                    _ => Some(e),
                })
        };
        pick(min_pulls).or_else(|| pick(1)).or_else(|| self.entries.values().next())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best_prompt: Prompt,
    pub pool: Vec<PoolEntry>,
    pub trials: Vec<TrialRecord>,
}

/// Owns the bandit state for one optimization run.
pub struct Optimizer<'a> {
    cfg: OptimizerConfig,
    agents: Agents<'a>,
    train: Vec<TrainExample>,
    concurrency: usize,
    pool: PromptPool,
    trials: Vec<TrialRecord>,
    failed_streak: usize,
    epochs: HashMap<usize, Vec<usize>>,
}

impl<'a> Optimizer<'a> {
    pub fn new(
        cfg: OptimizerConfig,
        seeds: &[String],
        train: Vec<TrainExample>,
        agents: Agents<'a>,
        concurrency: usize,
    ) -> Result<Self, OptimizerError> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(OptimizerError::NoSessions);
        }
        if seeds.is_empty() {
            return Err(OptimizerError::NoSeedPrompts);
        }
        let mut pool = PromptPool::default();
        for text in seeds {
            if !has_placeholders(text) {
                return Err(OptimizerError::Config("seed prompt lacks {session}/{candidates}".into()));
            }
            let id = pool.next_id();
            pool.admit(Prompt::seed(id, text.clone()));
        }
        Ok(Self {
            cfg,
            agents,
            train,
            concurrency: concurrency.max(1),
            pool,
            trials: Vec::new(),
            failed_streak: 0,
            epochs: HashMap::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn pool(&self) -> &PromptPool {
        &self.pool
    }

    pub fn trials(&self) -> &[TrialRecord] {
        &self.trials
    }

    pub fn seed_prompts(&self) -> Vec<Prompt> {
        self.pool
            .entries()
            .filter(|e| e.prompt.origin == PromptOrigin::Seed)
            .map(|e| e.prompt.clone())
            .collect()
    }

    /// Rebuilds state from a persisted log.
    ///
    /// `prompts` must contain every prompt referenced by `records`. Each
    /// record's selection is re-derived from the replayed stats and must
    /// match what was logged.
    pub fn replay(&mut self, prompts: &[Prompt], records: &[TrialRecord]) -> Result<(), OptimizerError> {
        if !self.trials.is_empty() {
            return Err(OptimizerError::Replay("optimizer already advanced".into()));
        }
        let by_id: HashMap<PromptId, &Prompt> = prompts.iter().map(|p| (p.id, p)).collect();
        for seed in self.seed_prompts() {
            match by_id.get(&seed.id) {
                Some(p) if **p == seed => {}
                _ => return Err(OptimizerError::Replay(format!("seed prompt {} differs from the log", seed.id))),
            }
        }
        for record in records {
            let t = self.trials.len() + 1;
            if record.trial != t {
                return Err(OptimizerError::Replay(format!("expected trial {t}, found {}", record.trial)));
            }
            let selected = select_prompt(&self.pool.active_stats(), t as u64, self.cfg.c);
            if selected != Some(record.prompt_id) {
                return Err(OptimizerError::Replay(format!(
                    "trial {t} logged prompt {} but the bandit selects {selected:?}",
                    record.prompt_id
                )));
            }
            self.credit(record.prompt_id, record.mean_reward)?;
            for id in &record.prompts_added {
                let prompt = by_id.get(id).ok_or(OptimizerError::UnknownPrompt(*id))?;
                if *id != self.pool.next_id() {
                    return Err(OptimizerError::Replay(format!("prompt {id} added out of order")));
                }
                self.pool.admit((*prompt).clone());
            }
            for id in &record.evicted {
                let entry = self.pool.entries.get_mut(id).ok_or(OptimizerError::UnknownPrompt(*id))?;
                entry.active = false;
            }
            self.note_failures(record);
            self.trials.push(record.clone());
        }
        Ok(())
    }

    fn credit(&mut self, id: PromptId, mean_reward: f64) -> Result<(), OptimizerError> {
        let entry = self.pool.entries.get_mut(&id).ok_or(OptimizerError::UnknownPrompt(id))?;
        entry.stats.record(mean_reward);
        Ok(())
    }

    fn note_failures(&mut self, record: &TrialRecord) {
        if record.sessions.iter().all(|s| s.failed) {
            self.failed_streak += 1;
        } else {
            self.failed_streak = 0;
        }
    }

    fn epoch_order(&mut self, epoch: usize) -> &[usize] {
        let n = self.train.len();
        let seed = self.cfg.seed;
        self.epochs.entry(epoch).or_insert_with(|| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut keyed_rng("epoch", seed, &epoch.to_string()));
            order
        })
    }

    /// Indices of the sessions evaluated in trial `t` (1-based).
    ///
    /// Batches walk a stream of per-epoch shuffles, so every session is seen
    /// once before any repeats. The batch depends only on `t`, which keeps
    /// resumed runs on the same schedule.
    pub fn batch_indices(&mut self, t: usize) -> Vec<usize> {
        let n = self.train.len();
        let b = self.cfg.batch_size.min(n);
        let start = (t - 1) * b;
        let indices: Vec<usize> = (start..start + b).collect();
        indices
            .into_iter()
            .map(|q| {
                let (epoch, offset) = (q / n, q % n);
                self.epoch_order(epoch)[offset]
            })
            .collect()
    }

    pub fn is_done(&self) -> bool {
        self.trials.len() >= self.cfg.max_trials
    }

    /// Runs the next trial. Returns the record and the prompts it admitted.
    pub fn step(&mut self) -> Result<(TrialRecord, Vec<Prompt>), OptimizerError> {
        let t = self.trials.len() + 1;
        let selected = select_prompt(&self.pool.active_stats(), t as u64, self.cfg.c).ok_or(OptimizerError::NoSeedPrompts)?;
        let prompt = self.pool.get(selected).expect("selected prompt is in the pool").prompt.clone();
        let batch = self.batch_indices(t);

        let outcomes: Vec<Result<RankedList, AgentError>> = {
            let agents = &self.agents;
            let train = &self.train;
            map_bounded(&batch, self.concurrency, |&i| {
                let ex = &train[i];
                agents.evaluate(&prompt, &ex.session, &ex.candidates)
            })
        };

        let mut sessions = Vec::with_capacity(batch.len());
        let mut errors: Vec<(usize, ErrorCase)> = Vec::new();
        for (&i, outcome) in batch.iter().zip(&outcomes) {
            let ex = &self.train[i];
            match outcome {
                Ok(ranked) => {
                    let error = detect_error(ranked, &ex.session.target, self.cfg.error_threshold, prompt.id);
                    sessions.push(SessionResult {
                        session_id: ex.session.session_id.clone(),
                        target_rank: ranked.rank_of(&ex.session.target),
                        reward: reward(ranked, &ex.session.target, self.cfg.reward_mode, self.cfg.error_threshold),
                        failed: false,
                        repaired: ranked.repaired,
                        flagged: error.is_some(),
                    });
                    if let Some(e) = error {
                        errors.push((i, e));
                    }
                }
                Err(e) => {
                    log::warn!("trial {t}: session {} failed: {e}", ex.session.session_id);
                    sessions.push(SessionResult {
                        session_id: ex.session.session_id.clone(),
                        target_rank: None,
                        reward: 0.0,
                        failed: true,
                        repaired: false,
                        flagged: false,
                    });
                }
            }
        }
        let mean_reward = sessions.iter().map(|s| s.reward).sum::<f64>() / sessions.len() as f64;
        self.credit(selected, mean_reward)?;

        let mut added = Vec::new();
        let mut evicted = Vec::new();
        let mut chain_errors = Vec::new();
        for (i, error) in errors.iter().take(self.cfg.errors_per_trial) {
            if let Err(e) = self.expand(&prompt, error, *i, &mut added, &mut evicted) {
                log::warn!("trial {t}: refinement for session {} stopped: {e}", error.session_id);
                chain_errors.push(format!("{}: {e}", error.session_id));
            }
        }

        let record = TrialRecord {
            trial: t,
            prompt_id: selected,
            sessions,
            mean_reward,
            errors_flagged: errors.len(),
            prompts_added: added.iter().map(|p: &Prompt| p.id).collect(),
            evicted,
            chain_errors,
        };
        self.note_failures(&record);
        self.trials.push(record.clone());
        if self.failed_streak >= ABORT_AFTER_FAILED_TRIALS {
            return Err(OptimizerError::Aborted(t));
        }
        Ok((record, added))
    }

    /// Makes room for one prompt; false if nothing may be retired.
    fn make_room(&mut self, incumbent: PromptId, evicted: &mut Vec<PromptId>) -> bool {
        if self.pool.active_len() < self.cfg.pool_max {
            return true;
        }
        match self.pool.eviction_candidate(incumbent, self.cfg.min_pulls_for_best) {
            Some(id) => {
                self.pool.entries.get_mut(&id).expect("candidate exists").active = false;
                evicted.push(id);
                true
            }
            None => false,
        }
    }

    /// InferReason → RefinePrompt → Augment for one error case.
    fn expand(
        &mut self,
        prompt: &Prompt,
        error: &ErrorCase,
        example: usize,
        added: &mut Vec<Prompt>,
        evicted: &mut Vec<PromptId>,
    ) -> Result<(), AgentError> {
        let ex = &self.train[example];
        let reasons = self.agents.infer_reason(prompt, error, &ex.session, &ex.candidates)?;
        let refined = self.agents.refine_prompt(prompt, &reasons, self.pool.next_id())?;

        let base = match self.pool.find_text(&refined.text) {
            Some(existing) => self.pool.get(existing).expect("found").prompt.clone(),
            None => {
                if !self.make_room(prompt.id, evicted) {
                    log::info!("pool full; dropping refined prompt");
                    return Ok(());
                }
                self.pool.admit(refined.clone());
                added.push(refined.clone());
                refined
            }
        };

        let variants = self.agents.augment(&base, self.cfg.n_variants, self.pool.next_id())?;
        let mut seen = HashSet::new();
        for variant in variants {
            if self.pool.find_text(&variant.text).is_some() || !seen.insert(variant.text.clone()) {
                continue;
            }
            if !self.make_room(prompt.id, evicted) {
                log::info!("pool full; dropping remaining variants");
                break;
            }
            let variant = Prompt {
                id: self.pool.next_id(),
                ..variant
            };
            self.pool.admit(variant.clone());
            added.push(variant);
        }
        Ok(())
    }

    /// Runs until `max_trials`, handing each finished trial to `sink` before
    /// starting the next one.
    pub fn run<F>(&mut self, mut sink: F) -> Result<(), OptimizerError>
    where
        F: FnMut(&TrialRecord, &[Prompt]) -> Result<(), OptimizerError>,
    {
        while !self.is_done() {
            match self.step() {
                Ok((record, added)) => sink(&record, &added)?,
                Err(OptimizerError::Aborted(t)) => {
                    let record = self.trials.last().expect("aborted trial recorded").clone();
                    sink(&record, &[])?;
                    return Err(OptimizerError::Aborted(t));
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    pub fn result(&self) -> OptimizationResult {
        let best = self
            .pool
            .best(self.cfg.min_pulls_for_best)
            .expect("pool always holds the seed prompts");
        OptimizationResult {
            best_prompt: best.prompt.clone(),
            pool: self.pool.entries().cloned().collect(),
            trials: self.trials.clone(),
        }
    }
}

/// Convenience wrapper: a fresh run to completion.
pub fn optimize(
    cfg: OptimizerConfig,
    seeds: &[String],
    train: Vec<TrainExample>,
    agents: Agents<'_>,
    concurrency: usize,
) -> Result<OptimizationResult, OptimizerError> {
    let mut opt = Optimizer::new(cfg, seeds, train, agents, concurrency)?;
    opt.run(|_, _| Ok(()))?;
    Ok(opt.result())
}
