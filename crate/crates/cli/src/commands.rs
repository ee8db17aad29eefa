//! The four pipeline commands.

use std::collections::{HashMap, HashSet};
use std::fs::OpenOptions;
use std::path::Path;

use greenrec::agents::{default_seed_prompt, has_placeholders, Agents};
use greenrec::error::{IngestError, OptimizerError};
use greenrec::domain::{CandidateKind, CandidateSet, Catalog, Prompt, PromptId, PromptOrigin, Session};
use greenrec::ingest::{self, DatasetSplit, SplitName};
use greenrec::llm::{map_bounded, BackendKind, ChatBackend, HttpBackend, MockBackend, MockScript, TracingBackend};
use greenrec::metrics::{aggregate, MetricsReport, SessionOutcome};
use greenrec::optimizer::{Optimizer, PoolEntry, TrainExample, TrialRecord};
use greenrec::reranker::{filter_candidates, LexicalScorer, PairScorer, RemoteScorer};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, ScorerKind};
use crate::error::CliError;
use crate::rundir::{self, RunDir};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRetention {
    pub split: String,
    pub sessions: usize,
    pub retained: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionReport {
    pub n_initial: usize,
    pub k_filter: usize,
    pub splits: Vec<SplitRetention>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub id: PromptId,
    pub parent: Option<PromptId>,
    pub origin: PromptOrigin,
    pub active: bool,
    pub pull_count: u64,
    pub reward_sum: f64,
    pub mean_reward: Option<f64>,
}

impl From<&PoolEntry> for PoolSummary {
    fn from(e: &PoolEntry) -> Self {
        Self {
            id: e.prompt.id,
            parent: e.prompt.parent,
            origin: e.prompt.origin,
            active: e.active,
            pull_count: e.stats.pull_count,
            reward_sum: e.stats.reward_sum,
            mean_reward: e.stats.mean(),
        }
    }
}

/// Contents of `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub best_prompt: Prompt,
    pub best_mean_reward: Option<f64>,
    pub trials: usize,
    pub total_pulls: u64,
    pub pool: Vec<PoolSummary>,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationFile {
    pub prompt: Prompt,
    pub metrics: MetricsReport,
}

fn load_split(cfg: &RunConfig, catalog: &Catalog, name: SplitName) -> Result<Option<DatasetSplit>, CliError> {
    let path = match name {
        SplitName::Train => Some(&cfg.paths.train),
        SplitName::Valid => cfg.paths.valid.as_ref(),
        SplitName::Test => Some(&cfg.paths.test),
    };
    let Some(path) = path else { return Ok(None) };
    let sessions = ingest::load_sessions(path, catalog).map_err(|e| with_path(e, path))?;
    Ok(Some(DatasetSplit { name, sessions }))
}

/// Prefixes line-numbered ingest errors with the file they came from.
fn with_path(e: IngestError, path: &Path) -> CliError {
    match e {
        IngestError::Io { .. } => CliError::Ingest(e),
        other => CliError::BadArtifact {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

fn load_catalog(cfg: &RunConfig) -> Result<Catalog, CliError> {
    ingest::load_catalog(&cfg.paths.catalog).map_err(|e| with_path(e, &cfg.paths.catalog))
}

fn load_splits(cfg: &RunConfig, catalog: &Catalog) -> Result<Vec<DatasetSplit>, CliError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for name in [SplitName::Train, SplitName::Valid, SplitName::Test] {
        if let Some(split) = load_split(cfg, catalog, name)? {
            for s in &split.sessions {
                if !seen.insert(s.session_id.clone()) {
                    return Err(CliError::Runtime(format!(
                        "session id {:?} appears in more than one split",
                        s.session_id
                    )));
                }
            }
            out.push(split);
        }
    }
    Ok(out)
}

fn build_scorer(cfg: &RunConfig) -> Result<Box<dyn PairScorer>, CliError> {
    match cfg.reranker.scorer {
        ScorerKind::Lexical => Ok(Box::new(LexicalScorer)),
        ScorerKind::Remote => {
            let endpoint = cfg.reranker.endpoint.clone().unwrap_or_default();
            let scorer = RemoteScorer::new(endpoint, cfg.reranker.timeout_ms)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            Ok(Box::new(scorer))
        }
    }
}

fn load_mock_script(cfg: &RunConfig) -> Result<MockScript, CliError> {
    match &cfg.mock.script {
        None => Ok(MockScript::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("mock script {}: {e}", path.display())))
        }
    }
}

/// The configured backend, wrapped in a tracer when `logging.llm_trace` is on.
pub fn build_backend(cfg: &RunConfig, sessions: &[&Session], run: &RunDir) -> Result<Box<dyn ChatBackend>, CliError> {
    let inner: Box<dyn ChatBackend> = match cfg.backend.kind {
        BackendKind::Mock => Box::new(MockBackend::new(load_mock_script(cfg)?).with_targets(sessions.iter().copied())),
        BackendKind::Http => {
            Box::new(HttpBackend::new(&cfg.backend).map_err(|e| CliError::Config(e.to_string()))?)
        }
    };
    if !cfg.logging.llm_trace {
        return Ok(inner);
    }
    let path = run.path(rundir::LLM_TRACE);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(CliError::io(&path))?;
    Ok(Box::new(TracingBackend::new(inner, Box::new(file))))
}

/// The effective config, minus where the run lives.
fn snapshot_config(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let mut snapshot = cfg.clone();
    snapshot.paths.run_dir = None;
    run.write_atomic(rundir::CONFIG_SNAPSHOT, snapshot.to_toml()?.as_bytes())
}

/// Stage 1: sample 100 candidates per session and keep the top `k_filter`.
pub fn cmd_filter(cfg: &RunConfig, run: &RunDir) -> Result<RetentionReport, CliError> {
    let catalog = load_catalog(cfg)?;
    let splits = load_splits(cfg, &catalog)?;
    let scorer = build_scorer(cfg)?;
    snapshot_config(cfg, run)?;

    let mut lines: Vec<CandidateSet> = Vec::new();
    let mut retention = Vec::new();
    for split in &splits {
        let outcomes = map_bounded(&split.sessions, cfg.backend.concurrency, |s| {
            let initial = ingest::sample_candidates(s, &catalog, cfg.ingest.n_initial, cfg.ingest.seed)?;
            let outcome = filter_candidates(scorer.as_ref(), s, &initial, cfg.reranker.k_filter, &catalog)?;
            Ok::<_, CliError>((initial, outcome))
        });
        let mut retained = 0;
        for result in outcomes {
            let (initial, outcome) = result?;
            retained += usize::from(outcome.diagnostics.target_retained);
            lines.push(initial);
            lines.push(outcome.filtered);
        }
        let n = split.sessions.len();
        retention.push(SplitRetention {
            split: split.name.as_str().to_string(),
            sessions: n,
            retained,
            rate: if n == 0 { 0.0 } else { retained as f64 / n as f64 },
        });
    }
    run.write_jsonl(rundir::CANDIDATES, &lines)?;
    let report = RetentionReport {
        n_initial: cfg.ingest.n_initial,
        k_filter: cfg.reranker.k_filter,
        splits: retention,
    };
    run.write_json(rundir::RETENTION, &report)?;
    Ok(report)
}

fn load_filtered(run: &RunDir) -> Result<HashMap<String, CandidateSet>, CliError> {
    let path = run.path(rundir::CANDIDATES);
    if !path.is_file() {
        return Err(CliError::MissingArtifact(path));
    }
    let sets = ingest::load_candidates(&path).map_err(|e| with_path(e, &path))?;
    Ok(sets
        .into_iter()
        .filter(|c| c.kind == CandidateKind::Filtered)
        .map(|c| (c.session_id.clone(), c))
        .collect())
}

fn seed_texts(cfg: &RunConfig) -> Result<Vec<String>, CliError> {
    if cfg.prompt.seeds.is_empty() {
        return Ok(vec![default_seed_prompt().to_string()]);
    }
    cfg.prompt
        .seeds
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(CliError::io(p))?;
            let text = text.trim_end().to_string();
            if !has_placeholders(&text) {
                return Err(CliError::Config(format!(
                    "{}: prompt lacks the {{session}} or {{candidates}} placeholder",
                    p.display()
                )));
            }
            Ok(text)
        })
        .collect()
}

fn run_result(opt: &Optimizer<'_>) -> RunResult {
    let result = opt.result();
    let best_mean = opt.pool().get(result.best_prompt.id).and_then(|e| e.stats.mean());
    RunResult {
        best_prompt: result.best_prompt,
        best_mean_reward: best_mean,
        trials: result.trials.len(),
        total_pulls: opt.pool().total_pulls(),
        pool: result.pool.iter().map(PoolSummary::from).collect(),
    }
}

/// What `cmd_optimize` did.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeSummary {
    pub resumed_from: usize,
    pub result: RunResult,
}

/// Stage 2: the bandit loop over the Train split, resumable from the logs.
pub fn cmd_optimize(cfg: &RunConfig, run: &RunDir) -> Result<OptimizeSummary, CliError> {
    let catalog = load_catalog(cfg)?;
    let splits = load_splits(cfg, &catalog)?;
    let filtered = load_filtered(run)?;
    let train_split = splits
        .iter()
        .find(|s| s.name == SplitName::Train)
        .expect("train split is always configured");
    let filtered_sets: Vec<CandidateSet> = train_split
        .sessions
        .iter()
        .filter_map(|s| filtered.get(&s.session_id).cloned())
        .collect();
    let train = TrainExample::pair(&train_split.sessions, &filtered_sets)?;
    let all_sessions: Vec<&Session> = splits.iter().flat_map(|s| &s.sessions).collect();
    let backend = build_backend(cfg, &all_sessions, run)?;
    let seeds = seed_texts(cfg)?;
    snapshot_config(cfg, run)?;

    let agents = Agents::new(backend.as_ref(), &catalog);
    let mut opt = Optimizer::new(cfg.optimizer.clone(), &seeds, train, agents, cfg.backend.concurrency)?;
    let seed_prompts = opt.seed_prompts();

    let resumed_from = if run.exists(rundir::TRIALS) {
        let (mut records, clean_t) = run.read_jsonl_prefix::<TrialRecord>(rundir::TRIALS)?;
        let (logged, clean_p) = run.read_jsonl_prefix::<Prompt>(rundir::PROMPTS)?;
        records.truncate(cfg.optimizer.max_trials);
        // A crash between the prompt and trial appends leaves orphans; keep
        // only prompts that a surviving record introduced.
        let by_id: HashMap<PromptId, &Prompt> = logged.iter().map(|p| (p.id, p)).collect();
        let mut prompts = seed_prompts.clone();
        for r in &records {
            for id in &r.prompts_added {
                let p = by_id
                    .get(id)
                    .ok_or_else(|| CliError::Optimizer(OptimizerError::UnknownPrompt(*id)))?;
                prompts.push((*p).clone());
            }
        }
        if !(clean_t && clean_p) {
            log::warn!("dropping torn lines from the trial log");
        }
        opt.replay(&prompts, &records)?;
        run.write_jsonl(rundir::PROMPTS, &prompts)?;
        run.write_jsonl(rundir::TRIALS, &records)?;
        records.len()
    } else {
        run.write_jsonl(rundir::PROMPTS, &seed_prompts)?;
        run.write_jsonl::<TrialRecord>(rundir::TRIALS, &[])?;
        0
    };
    if resumed_from > 0 {
        log::info!("resuming after trial {resumed_from}");
    }

    let mut prompt_log = run.append_log(rundir::PROMPTS)?;
    let mut trial_log = run.append_log(rundir::TRIALS)?;
    let outcome = opt.run(|record, added| {
        let mut persist = || -> Result<(), CliError> {
            for p in added {
                prompt_log.append(p)?;
            }
            trial_log.append(record)
        };
        persist().map_err(|e| OptimizerError::Sink(e.to_string()))?;
        log::info!(
            "trial {} prompt {} mean reward {:.4} errors {}",
            record.trial,
            record.prompt_id,
            record.mean_reward,
            record.errors_flagged
        );
        Ok(())
    });
    outcome?;

    let result = run_result(&opt);
    run.write_json(rundir::RESULT, &result)?;
    Ok(OptimizeSummary { resumed_from, result })
}

/// Where the prompt for `evaluate` comes from.
pub enum PromptSource<'a> {
    File(&'a Path),
    BestOfRun,
}

fn resolve_prompt(source: PromptSource<'_>, run: &RunDir) -> Result<Prompt, CliError> {
    let prompt = match source {
        PromptSource::File(path) => {
            if !path.is_file() {
                return Err(CliError::Config(format!("prompt file {} does not exist", path.display())));
            }
            let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
            Prompt::seed(PromptId(0), text.trim_end())
        }
        PromptSource::BestOfRun => run.read_json::<RunResult>(rundir::RESULT)?.best_prompt,
    };
    if !has_placeholders(&prompt.text) {
        return Err(CliError::Config("prompt lacks the {session} or {candidates} placeholder".into()));
    }
    Ok(prompt)
}

/// Ranks every Test session with a fixed prompt and aggregates the metrics.
pub fn cmd_evaluate(cfg: &RunConfig, run: &RunDir, source: PromptSource<'_>) -> Result<EvaluationFile, CliError> {
    let catalog = load_catalog(cfg)?;
    let splits = load_splits(cfg, &catalog)?;
    let test = splits
        .iter()
        .find(|s| s.name == SplitName::Test)
        .expect("test split is always configured");
    if test.sessions.is_empty() {
        return Err(CliError::Runtime("test split is empty; nothing to evaluate".into()));
    }
    let filtered = load_filtered(run)?;
    let pairs: Vec<(&Session, &CandidateSet)> = test
        .sessions
        .iter()
        .map(|s| {
            filtered.get(&s.session_id).map(|c| (s, c)).ok_or_else(|| {
                CliError::Runtime(format!("no filtered candidates for test session {:?}; rerun filter", s.session_id))
            })
        })
        .collect::<Result<_, _>>()?;
    let prompt = resolve_prompt(source, run)?;
    let all_sessions: Vec<&Session> = splits.iter().flat_map(|s| &s.sessions).collect();
    let backend = build_backend(cfg, &all_sessions, run)?;
    snapshot_config(cfg, run)?;

    let agents = Agents::new(backend.as_ref(), &catalog);
    let outcomes: Vec<SessionOutcome> = map_bounded(&pairs, cfg.backend.concurrency, |(s, c)| {
        let ranked = match agents.evaluate(&prompt, s, c) {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("session {}: {e}", s.session_id);
                None
            }
        };
        SessionOutcome {
            session_id: s.session_id.clone(),
            target: s.target.clone(),
            ranked,
            retained: c.contains(&s.target),
        }
    });
    let report = aggregate(&outcomes, &catalog, &cfg.metrics.cutoffs)?;
    run.write_jsonl(rundir::PER_SESSION, &report.rows)?;
    let file = EvaluationFile { prompt, metrics: report };
    run.write_json(rundir::METRICS, &file)?;
    Ok(file)
}

/// Everything `report` can show from a run directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunArtifacts {
    pub evaluation: EvaluationFile,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retention: Option<RetentionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimization: Option<RunResult>,
}

pub fn load_artifacts(run: &RunDir) -> Result<RunArtifacts, CliError> {
    let evaluation = run.read_json::<EvaluationFile>(rundir::METRICS)?;
    let optional = |name: &str| run.exists(name);
    let retention = if optional(rundir::RETENTION) {
        Some(run.read_json(rundir::RETENTION)?)
    } else {
        None
    };
    let optimization = if optional(rundir::RESULT) {
        Some(run.read_json(rundir::RESULT)?)
    } else {
        None
    };
    Ok(RunArtifacts {
        evaluation,
        retention,
        optimization,
    })
}
