//! `plf` — command-line driver for the distributed probabilistic load flow
//! library.
//!
//! Four subcommands cover the pipeline:
//!
//! - `run` executes the privacy-preserving distributed protocol and writes
//!   one regional result file per agent;
//! - `compare` re-executes a finished run deterministically and scores it
//!   against the centralized oracle, optionally adding a Monte-Carlo sweep;
//! - `validate` checks case and communication-graph files and prints
//!   report-style findings;
//! - `mc` runs the plain Monte-Carlo reference on a case.
//!
//! A `--config FILE` may supply defaults for any option; explicit flags win.
//! Failures exit with a documented code — 1 for numeric trouble, 2 for input
//! errors, 3 for non-convergence — and print a structured JSON error object
//! on stderr. All artifacts land under `--out` together with `manifest.json`
//! listing each tracked file and its SHA-256; given identical configuration
//! and seeds the tracked artifacts are byte-identical across runs (wall-clock
//! timings go to an untracked `timings.json`).

mod cmds;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use plf_core::error::ErrorKind;
use plf_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "plf",
    version,
    about = "Privacy-preserving distributed probabilistic load flow"
)]
struct Cli {
    /// JSON file supplying defaults for any option; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute the distributed protocol and write per-agent results.
    Run(RunArgs),
    /// Score a completed run directory against the centralized oracle.
    Compare(CompareArgs),
    /// Check case and graph files, printing report-style findings.
    Validate(ValidateArgs),
    /// Run the Monte-Carlo reference sweep on a case.
    Mc(McArgs),
}

/// Options of `plf run`. Every option is optional at parse time so the
/// config file can fill it in; requiredness is checked after merging.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// Power-system case file (JSON).
    #[arg(long, value_name = "FILE")]
    pub case: Option<PathBuf>,
    /// Communication graph file (JSON).
    #[arg(long, value_name = "FILE")]
    pub graph: Option<PathBuf>,
    /// Injection mixture file (JSON); defaults to an EM fit of --samples.
    #[arg(long, value_name = "FILE")]
    pub gmm: Option<PathBuf>,
    /// Historical observations (CSV, one [P_W Q_W] row per record); used as
    /// the public observation source, and as EM input when --gmm is absent.
    #[arg(long, value_name = "FILE")]
    pub samples: Option<PathBuf>,
    /// Mixture components fitted when only --samples is given.
    #[arg(long, value_name = "K")]
    pub components: Option<usize>,
    /// Master seed for masks, plans and substitutes [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initial mask amplitude; 0 disables masking [default: 1].
    #[arg(long)]
    pub rho: Option<f64>,
    /// Geometric mask decay per consensus round [default: 0.5].
    #[arg(long)]
    pub sigma_decay: Option<f64>,
    /// Stopping tolerance of the projected-consensus stage [default: 1e-9].
    #[arg(long)]
    pub apc_tol: Option<f64>,
    /// Iteration cap of the projected-consensus stage [default: 5000].
    #[arg(long)]
    pub apc_max_iters: Option<usize>,
    /// Disagreement tolerance of each inner averaging run [default: 1e-10].
    #[arg(long)]
    pub inner_aac_tol: Option<f64>,
    /// Output directory [default: plf-out].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Options of `plf compare`.
#[derive(Debug, Default, Args)]
pub struct CompareArgs {
    /// Directory written by a previous `plf run`.
    #[arg(long, value_name = "DIR")]
    pub run: Option<PathBuf>,
    /// Add a Monte-Carlo sweep with this many scenarios to the report.
    #[arg(long, value_name = "N")]
    pub mc: Option<usize>,
    /// Samples per side of each one-dimensional divergence estimate
    /// [default: 200000].
    #[arg(long, value_name = "N")]
    pub jsd_samples: Option<usize>,
    /// Seed of the divergence estimator and the sweep; defaults to the
    /// run's own seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: <RUN>/compare].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Options of `plf validate`.
#[derive(Debug, Default, Args)]
pub struct ValidateArgs {
    /// Case file to check.
    #[arg(long, value_name = "FILE")]
    pub case: Option<PathBuf>,
    /// Communication graph file to check.
    #[arg(long, value_name = "FILE")]
    pub graph: Option<PathBuf>,
}

/// Options of `plf mc`.
#[derive(Debug, Default, Args)]
pub struct McArgs {
    /// Power-system case file (JSON).
    #[arg(long, value_name = "FILE")]
    pub case: Option<PathBuf>,
    /// Injection mixture file (JSON); defaults to an EM fit of --samples.
    #[arg(long, value_name = "FILE")]
    pub gmm: Option<PathBuf>,
    /// Historical observations (CSV) to fit the mixture from.
    #[arg(long, value_name = "FILE")]
    pub samples: Option<PathBuf>,
    /// Mixture components fitted when only --samples is given.
    #[arg(long, value_name = "K")]
    pub components: Option<usize>,
    /// Number of scenarios to draw (at least 1000).
    #[arg(long, value_name = "N")]
    pub scenarios: Option<usize>,
    /// Scenario-sampling seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: plf-out].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let file = match config::FileConfig::load(cli.config.as_deref()) {
        Ok(file) => file,
        Err(err) => return fail(&err),
    };
    let result = match cli.command {
        Command::Run(args) => {
            config::RunConfig::resolve(args, &file).and_then(|(cfg, out)| cmds::run(&cfg, &out))
        }
        Command::Compare(args) => config::CompareConfig::resolve(args, &file)
            .and_then(|(cfg, out)| cmds::compare_run(&cfg, &out)),
        Command::Validate(args) => cmds::validate(
            args.case.or_else(|| file.case.clone()),
            args.graph.or_else(|| file.graph.clone()),
        ),
        Command::Mc(args) => {
            config::McConfig::resolve(args, &file).and_then(|(cfg, out)| cmds::mc(&cfg, &out))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => fail(&err),
    }
}

/// Print the structured error object on stderr and pick the documented exit
/// code: 1 numeric, 2 input, 3 non-convergence.
fn fail(err: &Error) -> ExitCode {
    let (kind, code) = match err.kind() {
        ErrorKind::Input => ("input", 2u8),
        ErrorKind::Numeric => ("numeric", 1u8),
        ErrorKind::NonConvergence => ("non-convergence", 3u8),
    };
    let mut chain = Vec::new();
    let mut source = std::error::Error::source(err);
    while let Some(cause) = source {
        chain.push(cause.to_string());
        source = cause.source();
    }
    let payload = serde_json::json!({
        "error": {
            "kind": kind,
            "exit_code": code,
            "message": err.to_string(),
            "chain": chain,
        }
    });
    eprintln!("{payload}");
    ExitCode::from(code)
}
