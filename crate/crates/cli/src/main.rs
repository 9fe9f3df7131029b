mod config;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::config::{KRange, Mode};
use crate::output::OutputDir;

/// Periodic solutions of -u'' = lambda u + a(t) u^3: bifurcation data as CSV.
#[derive(Parser, Debug)]
#[command(name = "perbif", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Eigenvalue index or inclusive range such as `0..3`.
    #[arg(long, global = true)]
    k: Option<String>,

    /// Lower end of the lambda window.
    #[arg(long, global = true, allow_hyphen_values = true)]
    lambda_min: Option<f64>,

    /// Look for nT-periodic solutions.
    #[arg(long, global = true)]
    n_subharmonic: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Eigenvalues sigma_k and kernel dimensions.
    Eigs,
    /// Orbits of the constant-weight problem and its period function.
    Autonomous,
    /// Reduced-equation coefficients and structural checks.
    Lscoeff,
    /// Roots of the reduced equation and shooting-corrected seeds.
    LocalBranches,
    /// Continue every local branch through the lambda window.
    Continue,
    /// Continuation plus the trivial line and bifurcation points.
    Diagram,
    /// Use the mode named in the config.
    Run,
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PERBIF_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("PERBIF_THREADS={v:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<bool> {
    init_threads()?;
    let path = cli.config.context("--config <path> is required")?;
    let mut cfg = config::load(&path)?;
    if let Some(k) = &cli.k {
        cfg.k = KRange::parse(k)?;
    }
    if let Some(l) = cli.lambda_min {
        cfg.lambda.min = l;
    }
    if let Some(n) = cli.n_subharmonic {
        cfg.n_subharmonic = n;
    }
    let mode = match cli.command {
        Command::Eigs => Mode::Eigs,
        Command::Autonomous => Mode::Autonomous,
        Command::Lscoeff => Mode::Lscoeff,
        Command::LocalBranches => Mode::LocalBranches,
        Command::Continue => Mode::Continue,
        Command::Diagram => Mode::Diagram,
        Command::Run => cfg.mode.context("config names no mode")?,
    };
    let out_dir = cli
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("perbif-out"));
    let exp = cfg.resolve(&path)?;
    let out = OutputDir::create(&out_dir)?;
    let report = run::run(&exp, mode, out)?;

    for f in &report.files {
        println!(
            "wrote {} ({} rows)",
            out_dir.join(&f.name).display(),
            f.rows
        );
    }
    for b in &report.branches {
        println!(
            "branch {} (k={}): {} after {} points",
            b.id,
            b.k,
            b.termination.as_str(),
            b.points
        );
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    Ok(report.violations.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
