//! Run configuration: one TOML file plus command-line overrides.
//!
//! ```toml
//! [paths]
//! catalog = "data/catalog.jsonl"
//! train = "data/train.jsonl"
//! test = "data/test.jsonl"
//! runs_root = "runs"
//!
//! [ingest]
//! n_initial = 100
//! seed = 7
//!
//! [optimizer]
//! max_trials = 50
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use greenrec::ingest::DEFAULT_N_INITIAL;
use greenrec::llm::{BackendConfig, BackendKind};
use greenrec::metrics::DEFAULT_CUTOFFS;
use greenrec::optimizer::OptimizerConfig;
use greenrec::reranker::DEFAULT_K_FILTER;
use greenrec::seeding::hex_digest;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub catalog: PathBuf,
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<PathBuf>,
    pub test: PathBuf,
    /// Parent of auto-named run directories.
    #[serde(default = "default_runs_root")]
    pub runs_root: PathBuf,
    /// Fixed run directory; overrides the auto-naming.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_dir: Option<PathBuf>,
}

fn default_runs_root() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    #[serde(default = "default_n_initial")]
    pub n_initial: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_initial() -> usize {
    DEFAULT_N_INITIAL
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            n_initial: DEFAULT_N_INITIAL,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    #[default]
    Lexical,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankerConfig {
    #[serde(default = "default_k_filter")]
    pub k_filter: usize,
    #[serde(default)]
    pub scorer: ScorerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_scorer_timeout")]
    pub timeout_ms: u64,
}

fn default_k_filter() -> usize {
    DEFAULT_K_FILTER
}

fn default_scorer_timeout() -> u64 {
    30_000
}

impl Default for RerankerConfig {
    fn default() -> Self {
        Self {
            k_filter: DEFAULT_K_FILTER,
            scorer: ScorerKind::Lexical,
            endpoint: None,
            timeout_ms: default_scorer_timeout(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockConfig {
    /// JSON mock script; without one the mock only answers quality-marked prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoggingConfig {
    /// Write every backend call to `llm_trace.jsonl` in the run directory.
    #[serde(default)]
    pub llm_trace: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    /// Seed prompt files; the built-in seed prompt is used when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "default_cutoffs")]
    pub cutoffs: Vec<usize>,
}

fn default_cutoffs() -> Vec<usize> {
    DEFAULT_CUTOFFS.to_vec()
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            cutoffs: default_cutoffs(),
        }
    }
}

fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::with_trials(50)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub reranker: RerankerConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub mock: MockConfig,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub logging: LoggingConfig,
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub backend: Option<BackendKind>,
    pub mock_script: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
    pub max_trials: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file and makes its relative paths absolute.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.catalog);
        fix(&mut self.paths.train);
        fix(&mut self.paths.test);
        fix(&mut self.paths.runs_root);
        self.paths.valid.as_mut().map(fix);
        self.paths.run_dir.as_mut().map(fix);
        self.mock.script.as_mut().map(fix);
        self.prompt.seeds.iter_mut().for_each(fix);
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.ingest.seed = seed;
            self.optimizer.seed = seed;
        }
        if let Some(kind) = o.backend {
            self.backend.kind = kind;
        }
        if let Some(script) = &o.mock_script {
            self.mock.script = Some(script.clone());
        }
        if let Some(dir) = &o.run_dir {
            self.paths.run_dir = Some(dir.clone());
        }
        if let Some(n) = o.max_trials {
            self.optimizer.max_trials = n;
        }
    }

    /// Checks the numeric invariants; no filesystem access.
    pub fn validate(&self) -> Result<(), CliError> {
        let cutoffs = &self.metrics.cutoffs;
        if cutoffs.is_empty() || cutoffs.contains(&0) {
            return Err(CliError::Config("metrics.cutoffs must be non-empty and positive".into()));
        }
        let max_cutoff = *cutoffs.iter().max().unwrap();
        let (n, k) = (self.ingest.n_initial, self.reranker.k_filter);
        if n <= k {
            return Err(CliError::Config(format!("n_initial ({n}) must exceed k_filter ({k})")));
        }
        if k < max_cutoff {
            return Err(CliError::Config(format!(
                "k_filter ({k}) must be at least the largest cutoff ({max_cutoff})"
            )));
        }
        if self.reranker.scorer == ScorerKind::Remote && self.reranker.endpoint.is_none() {
            return Err(CliError::Config("reranker.endpoint is required for the remote scorer".into()));
        }
        self.backend.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.optimizer.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Fails when any input file the pipeline reads is missing.
    pub fn check_files(&self) -> Result<(), CliError> {
        let mut required: Vec<(&str, &Path)> = vec![
            ("paths.catalog", &self.paths.catalog),
            ("paths.train", &self.paths.train),
            ("paths.test", &self.paths.test),
        ];
        if let Some(v) = &self.paths.valid {
            required.push(("paths.valid", v));
        }
        if self.backend.kind == BackendKind::Mock {
            if let Some(s) = &self.mock.script {
                required.push(("mock.script", s));
            }
        }
        for s in &self.prompt.seeds {
            required.push(("prompt.seeds", s));
        }
        for (key, path) in required {
            if !path.is_file() {
                return Err(CliError::Config(format!("{key}: {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    /// Short digest of everything except where the run is stored.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths.run_dir = None;
        canonical.paths.runs_root = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config always serializes");
        hex_digest(&json)[..8].to_string()
    }

    /// The run directory: the configured one, else the newest
    /// `<timestamp>-<hash>` under `runs_root`, else a fresh one.
    pub fn run_dir(&self) -> PathBuf {
        if let Some(dir) = &self.paths.run_dir {
            return dir.clone();
        }
        let suffix = format!("-{}", self.hash());
        let existing = std::fs::read_dir(&self.paths.runs_root).ok().and_then(|entries| {
            entries
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_dir())
                .filter_map(|e| e.file_name().into_string().ok())
                .filter(|name| name.ends_with(&suffix))
                .max()
        });
        let name = existing.unwrap_or_else(|| format!("{}{suffix}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ")));
        self.paths.runs_root.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[paths]
catalog = "catalog.jsonl"
train = "train.jsonl"
test = "test.jsonl"
"#;

    fn minimal() -> RunConfig {
        RunConfig::from_toml(MINIMAL).unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = minimal();
        assert_eq!(cfg.ingest.n_initial, 100);
        assert_eq!(cfg.reranker.k_filter, 20);
        assert_eq!(cfg.metrics.cutoffs, vec![1, 5]);
        assert_eq!(cfg.backend.kind, BackendKind::Mock);
        assert_eq!(cfg.optimizer.c, std::f64::consts::SQRT_2);
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trips() {
        let mut cfg = minimal();
        cfg.paths.valid = Some("valid.jsonl".into());
        cfg.mock.script = Some("mock.json".into());
        cfg.reranker.endpoint = Some("http://localhost:9000/score".into());
        cfg.optimizer.seed = 99;
        cfg.prompt.seeds = vec!["a.txt".into(), "b.txt".into()];
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml(&minimal().to_toml().unwrap()).unwrap(), minimal());
    }

    #[test]
    fn cutoff_must_fit_in_filtered_set() {
        let mut cfg = minimal();
        cfg.reranker.k_filter = 5;
        cfg.metrics.cutoffs = vec![1, 5];
        cfg.validate().unwrap();
        cfg.metrics.cutoffs = vec![1, 6];
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn n_initial_must_exceed_k_filter() {
        let mut cfg = minimal();
        cfg.ingest.n_initial = 20;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\n[ingest]\nn_intial = 5\n");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn remote_scorer_needs_endpoint() {
        let mut cfg = minimal();
        cfg.reranker.scorer = ScorerKind::Remote;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = minimal();
        cfg.apply(&Overrides {
            seed: Some(5),
            backend: Some(BackendKind::Http),
            max_trials: Some(3),
            ..Default::default()
        });
        assert_eq!((cfg.ingest.seed, cfg.optimizer.seed), (5, 5));
        assert_eq!(cfg.backend.kind, BackendKind::Http);
        assert_eq!(cfg.optimizer.max_trials, 3);
    }

    #[test]
    fn hash_ignores_run_location() {
        let a = minimal();
        let mut b = minimal();
        b.paths.run_dir = Some("elsewhere".into());
        b.paths.runs_root = "other".into();
        assert_eq!(a.hash(), b.hash());
        let mut c = minimal();
        c.ingest.seed = 1;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 8);
    }

    proptest::proptest! {
        #[test]
        fn any_config_round_trips(
            n_initial in 2usize..500,
            k_filter in 1usize..100,
            seed in 0..=i64::MAX as u64,
            c in 0.0f64..10.0,
            trials in 1usize..1000,
            cutoffs in proptest::collection::vec(1usize..50, 1..4),
            valid in proptest::bool::ANY,
            trace in proptest::bool::ANY,
            remote in proptest::bool::ANY,
        ) {
            let mut cfg = minimal();
            cfg.ingest.n_initial = n_initial;
            cfg.ingest.seed = seed;
            cfg.reranker.k_filter = k_filter;
            if remote {
                cfg.reranker.scorer = ScorerKind::Remote;
                cfg.reranker.endpoint = Some("http://127.0.0.1:1/score".into());
            }
            cfg.optimizer.c = c;
            cfg.optimizer.seed = seed;
            cfg.optimizer.max_trials = trials;
            cfg.metrics.cutoffs = cutoffs;
            cfg.logging.llm_trace = trace;
            if valid {
                cfg.paths.valid = Some("valid.jsonl".into());
            }
            let text = cfg.to_toml().unwrap();
            proptest::prop_assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let mut cfg = minimal();
        cfg.resolve_paths(Path::new("/data/exp"));
        assert_eq!(cfg.paths.catalog, PathBuf::from("/data/exp/catalog.jsonl"));
        assert_eq!(cfg.paths.runs_root, PathBuf::from("/data/exp/runs"));
    }
}
