//! Argument parsing and dispatch.

use std::io::Write;
use std::path::PathBuf;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use greenrec::llm::BackendKind;

use crate::commands::{self, PromptSource};
use crate::config::{Overrides, RunConfig};
use crate::error::CliError;
use crate::report::{self, Format};
use crate::rundir::RunDir;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Http,
}

#[derive(Debug, Parser)]
#[command(name = "greenrec", version, about = "Candidate filtering, prompt optimization and evaluation for session-based recommendation")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides both the sampling and the optimizer seed.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    /// JSON script for the mock backend.
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "table")]
    format: Format,
    /// Use this run directory instead of the auto-named one.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    max_trials: Option<usize>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample initial candidates and keep the top k per session.
    Filter,
    /// Run the bandit prompt optimizer on the Train split (resumes if logs exist).
    Optimize,
    /// Score the Test split with a fixed prompt.
    Evaluate {
        /// Prompt file; defaults to the best prompt of the run.
        #[arg(long)]
        prompt: Option<PathBuf>,
    },
    /// Print metrics and prompt statistics of a run directory.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        backend: cli.backend.map(|b| match b {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Http => BackendKind::Http,
        }),
        mock_script: cli.mock_script.clone(),
        run_dir: cli.run_dir.clone(),
        max_trials: cli.max_trials,
    });
    cfg.validate()?;
    cfg.check_files()?;
    Ok(cfg)
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let emit = |out: &mut dyn Write, text: &str| out.write_all(text.as_bytes()).map_err(CliError::io("<stdout>"));
    match &cli.command {
        Command::Report => {
            let dir = match &cli.run_dir {
                Some(d) => d.clone(),
                None => load_config(cli)?.run_dir(),
            };
            let run = RunDir::existing(dir)?;
            let artifacts = commands::load_artifacts(&run)?;
            emit(out, &report::render(&artifacts, cli.format))
        }
        Command::Filter => {
            let cfg = load_config(cli)?;
            let run = RunDir::create(cfg.run_dir())?;
            let r = commands::cmd_filter(&cfg, &run)?;
            let mut text = format!("run directory: {}\n", run.root().display());
            for s in &r.splits {
                text += &format!(
                    "{:<5} target retention {:.4} ({}/{} sessions, {} -> {})\n",
                    s.split, s.rate, s.retained, s.sessions, r.n_initial, r.k_filter
                );
            }
            emit(out, &text)
        }
        Command::Optimize => {
            let cfg = load_config(cli)?;
            let run = RunDir::create(cfg.run_dir())?;
            let s = commands::cmd_optimize(&cfg, &run)?;
            let best = &s.result.best_prompt;
            let mean = s.result.best_mean_reward.map_or("-".into(), |m| format!("{m:.4}"));
            let text = format!(
                "run directory: {}\ntrials: {} (resumed after {})\nbest prompt: {} (mean reward {mean})\n",
                run.root().display(),
                s.result.trials,
                s.resumed_from,
                best.id
            );
            emit(out, &text)
        }
        Command::Evaluate { prompt } => {
            let cfg = load_config(cli)?;
            let run = RunDir::create(cfg.run_dir())?;
            let source = match prompt {
                Some(p) => PromptSource::File(p),
                None => PromptSource::BestOfRun,
            };
            commands::cmd_evaluate(&cfg, &run, source)?;
            let artifacts = commands::load_artifacts(&run)?;
            emit(out, &format!("run directory: {}\n", run.root().display()))?;
            emit(out, &report::render(&artifacts, cli.format))
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
