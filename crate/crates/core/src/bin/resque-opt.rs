use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use resque::harness::{run_experiment, ExperimentConfig, Mode};
use resque::par;

/// Run an experiment or a verification suite.
#[derive(Parser)]
#[command(name = "resque-opt", version)]
struct Cli {
    /// parallel, dp_erm, dp_sco or verify
    mode: Mode,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value`, applied after the config file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn run(cli: Cli) -> resque::Result<bool> {
    let threads = std::env::var("RESQUE_THREADS").ok().and_then(|v| v.parse().ok());
    par::init_threads(threads);
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.mode = cli.mode;
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = cli.out {
        cfg.out = Some(o);
    }
    cfg.validate()?;
    let report = run_experiment(&cfg)?;
    match &cfg.out {
        Some(path) => {
            report.write(path)?;
            print!("{}", report.summary());
        }
        None if cfg.mode == Mode::Verify => print!("{}", report.summary()),
        None => print!("{}{}", report.to_csv()?, report.summary()),
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
