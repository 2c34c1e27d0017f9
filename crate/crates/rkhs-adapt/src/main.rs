use clap::{Parser, Subcommand};
use rkhs_adapt::experiment::{self, ExperimentConfig, ExperimentError};
use std::path::PathBuf;
use std::process::ExitCode;

/// Adaptive estimation experiments: simulation, kernel center selection,
/// placement diagnostics, estimator runs, and pointwise error grids.
#[derive(Parser)]
#[command(name = "rkhs-adapt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's center-selection seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory (overrides the config's [output] dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: simulate, centers, diagnose, estimate, grid, manifest.
    Run,
    /// Integrate the plant and write trajectory.csv.
    Simulate,
    /// Select kernel centers from trajectory.csv.
    Centers,
    /// Placement and persistence-of-excitation diagnostics.
    Diagnose,
    /// Run the adaptive estimator from centers.csv.
    Estimate,
    /// Pointwise error grid of the final coefficients.
    Grid,
}

fn load(cli: &Cli) -> Result<(ExperimentConfig, PathBuf), ExperimentError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("--config is required".into()))?;
    let mut cfg = experiment::load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.centers.seed = Some(seed);
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    cfg.output.dir = Some(out.display().to_string());
    Ok((cfg, out))
}

fn dispatch(cli: &Cli) -> Result<(), ExperimentError> {
    let (cfg, out) = load(cli)?;
    std::fs::create_dir_all(&out)?;
    match cli.command {
        Command::Run => experiment::run_experiment(&cfg, &out),
        Command::Simulate => experiment::stage_simulate(&cfg, &out),
        Command::Centers => experiment::stage_centers(&cfg, &out),
        Command::Diagnose => experiment::stage_diagnose(&cfg, &out),
        Command::Estimate => experiment::stage_estimate(&cfg, &out),
        Command::Grid => experiment::stage_grid(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
