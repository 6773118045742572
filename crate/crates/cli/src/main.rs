use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use sgdlab::checks::{self, DEFAULT_SEED};

mod catalog;
mod config;
mod experiments;
mod failure;
mod output;

use config::{ExperimentConfig, Kind};
use failure::{config_error, exit_code};

#[derive(Parser)]
#[command(
    name = "sgdlab",
    version,
    about = "Descent experiments: GD, SGD, SCD, moments, Fokker-Planck, smoothed games"
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Single full-gradient trajectory
    Gd(ExperimentConfig),
    /// Single stochastic trajectory
    Sgd(ExperimentConfig),
    /// Many trials; final-point histogram and, where available, an exact oracle overlay
    Ensemble(ExperimentConfig),
    /// Exact mean and variance recursion for the convex pair
    Moments(ExperimentConfig),
    /// Density evolution of the drift-diffusion approximation
    FokkerPlanck(ExperimentConfig),
    /// Ensemble on an lp-smoothed game
    Game(ExperimentConfig),
    /// Run an experiment described by a JSON file using the flag names as keys
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the file's output directory
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Run named acceptance checks and print a JSON verdict per check
    Verify {
        #[arg(long = "check")]
        checks: Vec<String>,
        /// Run every check
        #[arg(long)]
        all: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the verdicts to this file
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Objectives, estimators, games, schedules and checks
    ListCatalog,
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SGDLAB_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            config_error(format!(
                "SGDLAB_THREADS must be a positive integer, got '{v}'"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn with_kind(mut cfg: ExperimentConfig, kind: Kind) -> ExperimentConfig {
    cfg.kind = Some(kind);
    cfg
}

/// Returns whether every check passed.
fn verify(
    names: Vec<String>,
    all: bool,
    seed: Option<u64>,
    output: Option<PathBuf>,
) -> Result<bool> {
    let names: Vec<String> = if all {
        checks::checks()
            .iter()
            .map(|c| c.name.to_string())
            .collect()
    } else {
        names
    };
    if names.is_empty() {
        return Err(config_error("name at least one --check, or pass --all"));
    }
    for n in &names {
        if !checks::checks().iter().any(|c| c.name == n) {
            return Err(config_error(format!(
                "unknown check '{n}' (see list-catalog)"
            )));
        }
    }
    let seed = seed.unwrap_or(DEFAULT_SEED);
    let mut reports = Vec::new();
    for n in &names {
        let r = checks::run_check(n, seed)?;
        eprintln!("{}", r.line());
        reports.push(r);
    }
    let pass = reports.iter().all(|r| r.pass);
    let verdict = json!({ "seed": seed, "pass": pass, "checks": reports });
    let text = serde_json::to_string_pretty(&verdict)? + "\n";
    print!("{text}");
    if let Some(path) = output {
        fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(pass)
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Commands::Gd(c) => experiments::run(with_kind(c, Kind::Gd)),
        Commands::Sgd(c) => experiments::run(with_kind(c, Kind::Sgd)),
        Commands::Ensemble(c) => experiments::run(with_kind(c, Kind::Ensemble)),
        Commands::Moments(c) => experiments::run(with_kind(c, Kind::Moments)),
        Commands::FokkerPlanck(c) => experiments::run(with_kind(c, Kind::FokkerPlanck)),
        Commands::Game(c) => experiments::run(with_kind(c, Kind::Game)),
        Commands::Run {
            config,
            output,
            force,
        } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = ExperimentConfig::from_json(&text)
                .with_context(|| format!("parsing {}", config.display()))?;
            if output.is_some() {
                cfg.output = output;
            }
            cfg.force |= force;
            experiments::run(cfg)
        }
        Commands::Verify {
            checks,
            all,
            seed,
            output,
        } => return verify(checks, all, seed, output),
        Commands::ListCatalog => {
            print!("{}", catalog::listing());
            Ok(())
        }
    }
    .map(|_| true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| dispatch(cli));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(failure::EXIT_FAILURE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
