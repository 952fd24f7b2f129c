//! `proctomo`: simulate multi-time processes, probe them, and reconstruct
//! the process matrix from the resulting statistics.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use proctomo::probe::Provenance;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "proctomo", version, about = "Multi-time process tomography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Span dimensions of unitary, CPTP and measure-and-prepare Choi families.
    Span,
    /// Build a preset process, a probe family and synthetic data.
    Simulate,
    /// Linear inversion of the data written by `simulate`.
    Reconstruct,
    /// Run the invariant suite.
    Verify,
    /// Circuit manifests for the ancilla-mediated probes.
    ExportCircuits,
}

#[derive(Debug, clap::Args)]
struct Overrides {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    labs: Option<usize>,
    /// Shots per setting; 0 records exact probabilities.
    #[arg(long, global = true)]
    shots: Option<u64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// e.g. `HaarEnv(2)`, `MarkovDepolarizing(0.1)`, `ClassicalMemory`, `IdentityWire`.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Qubit16, Theorem2Weyl, UnitaryOnly or MeasurePrepare.
    #[arg(long, global = true)]
    family: Option<String>,
}

fn resolve(o: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = o.dim {
        cfg.d_sys = v;
    }
    if let Some(v) = o.labs {
        cfg.n_labs = v;
    }
    if let Some(v) = o.shots {
        cfg.shots = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = &o.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &o.preset {
        cfg.preset = v.clone();
    }
    if let Some(v) = &o.family {
        cfg.family.provenance =
            serde_json::from_value::<Provenance>(serde_json::Value::String(v.clone())).map_err(|_| {
                CliError::Config {
                    field: "family.provenance",
                    message: format!("unknown family `{v}`"),
                }
            })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads(cfg: &RunConfig) -> Result<(), CliError> {
    let from_env = match std::env::var("PROCTOMO_THREADS") {
        Ok(s) => Some(
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| CliError::Config {
                    field: "PROCTOMO_THREADS",
                    message: format!("`{s}` is not a positive integer"),
                })?,
        ),
        Err(_) => None,
    };
    if let Some(n) = from_env.or(cfg.threads) {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn run(cli: &Cli) -> commands::Status {
    let cfg = resolve(&cli.overrides)?;
    init_threads(&cfg)?;
    match cli.command {
        Command::Span => commands::span(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Reconstruct => commands::reconstruct(&cfg),
        Command::Verify => commands::verify(&cfg),
        Command::ExportCircuits => commands::export_circuits(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
