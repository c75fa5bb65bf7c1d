//! `snerv`: runs one stage of the spectral-analysis pipeline.
//!
//! Stages read their inputs from the configuration and from earlier stages'
//! outputs under the output directory, and refuse to run on stale upstream
//! outputs unless `--force` is given. Failures print a one-line JSON object
//! to stderr and exit nonzero.

mod config;
mod context;
mod error;
mod manifest;
mod report;
mod stages;
mod svg;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::config::PipelineConfig;
use crate::context::{Context, Stage};
use crate::error::{CliError, Result};

/// Environment variable capping the number of worker threads.
const THREADS_VAR: &str = "SNERV_THREADS";

#[derive(Debug, Parser)]
#[command(name = "snerv", version, about = "Spectral analysis of multispectral optoacoustic stacks")]
struct Cli {
    /// Stage to run.
    #[arg(value_enum)]
    stage: Stage,
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configuration's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run even if upstream outputs are stale.
    #[arg(long)]
    force: bool,
    /// Omit wall-clock measurements so reruns are byte-identical.
    #[arg(long)]
    strict_deterministic: bool,
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::ConfigInvalid(format!("{THREADS_VAR} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Failed(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let (cfg, base) = PipelineConfig::load(&cli.config)?;
    let ctx = Context::new(cfg, base, cli.seed, cli.out, cli.force, cli.strict_deterministic);
    stages::run(cli.stage, &ctx)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::ConfigInvalid(e.kind().to_string());
            eprint!("{e}");
            eprintln!("{}", err.to_json("arguments"));
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    let stage = cli.stage;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json(stage.name()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
