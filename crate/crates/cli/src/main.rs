//! Command-line front end: model selection, experiment configuration,
//! execution, and machine-readable reporting.
//!
//! Every run reads one JSON config (strict: unknown fields are rejected),
//! writes `<command>.json` (always) plus CSV for tabular outputs, and exits
//! 0 on pass, 1 on a hard-assertion failure or execution error, 2 on an
//! invalid config. All randomness flows from the config's single seed, so
//! identical configs produce byte-identical reports at any thread count.

mod commands;
mod config;
mod output;

use clap::{Parser, Subcommand};
use config::{ConfigError, ExperimentConfig};
use output::{Format, ReportWriter};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sdde-lab", version, about = "Delay-SDE simulation and verification lab")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads (affects speed only, never results).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Report format; JSON is always written, CSV only for `csv`/`both`.
    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Weighted controllability Gramian and Kalman rank report.
    Gramian,
    /// Build and export the coupling plan for one (T, h).
    Plan,
    /// Simulate paths and report terminal statistics.
    Simulate,
    /// Gradient estimate: stochastic-integral weight vs the
    /// common-random-number central difference.
    Gradient,
    /// Change-of-measure identity and unit-mean density check.
    GirsanovCheck,
    /// Pointwise drift-condition checks on grids / sampled segments.
    VerifyAssumptions,
    /// Empirical one-sided moment bound.
    MomentBound,
    /// Log-Harnack harness (Jensen baseline is a hard assertion).
    LogHarnack,
    /// Power-Harnack harness (Jensen baseline is a hard assertion).
    Harnack,
    /// Gradient-bound harness over a horizon sweep.
    GradientBoundSweep,
    /// Entropy-gradient harness over an r-sweep.
    EntropyGradient,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Gramian => "gramian",
            Command::Plan => "plan",
            Command::Simulate => "simulate",
            Command::Gradient => "gradient",
            Command::GirsanovCheck => "girsanov-check",
            Command::VerifyAssumptions => "verify-assumptions",
            Command::MomentBound => "moment-bound",
            Command::LogHarnack => "log-harnack",
            Command::Harnack => "harnack",
            Command::GradientBoundSweep => "gradient-bound-sweep",
            Command::EntropyGradient => "entropy-gradient",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not configure {threads} threads: {e}");
            return ExitCode::from(1);
        }
    }

    let started = std::time::Instant::now();
    match run(&cli) {
        Ok(true) => {
            eprintln!(
                "{}: pass ({:.2}s)",
                cli.command.name(),
                started.elapsed().as_secs_f64()
            );
            ExitCode::SUCCESS
        }
        Ok(false) => {
            eprintln!("{}: hard-assertion FAILED", cli.command.name());
            ExitCode::from(1)
        }
        Err(e) => {
            if e.downcast_ref::<ConfigError>().is_some() {
                eprintln!("{}: {e}", cli.command.name());
                ExitCode::from(2)
            } else {
                eprintln!("{}: error: {e}", cli.command.name());
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| ConfigError("--config <file> is required".into()))?;
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", config_path.display())))?;
    let cfg = ExperimentConfig::parse(&text)?;
    let writer = ReportWriter::new(&cli.out, cli.format)?;

    let started = std::time::Instant::now();
    let passed = match cli.command {
        Command::Gramian => commands::run_gramian(&cfg, &writer)?,
        Command::Plan => commands::run_plan(&cfg, &writer)?,
        Command::Simulate => commands::run_simulate(&cfg, &writer)?,
        Command::Gradient => commands::run_gradient(&cfg, &writer)?,
        Command::GirsanovCheck => commands::run_girsanov_check(&cfg, &writer)?,
        Command::VerifyAssumptions => commands::run_verify_assumptions(&cfg, &writer)?,
        Command::MomentBound => commands::run_moment_bound(&cfg, &writer)?,
        Command::LogHarnack => commands::run_log_harnack(&cfg, &writer)?,
        Command::Harnack => commands::run_harnack(&cfg, &writer)?,
        Command::GradientBoundSweep => commands::run_gradient_bound_sweep(&cfg, &writer)?,
        Command::EntropyGradient => commands::run_entropy_gradient(&cfg, &writer)?,
    };
    writer.write_meta(
        cli.command.name(),
        cli.threads,
        started.elapsed().as_secs_f64(),
    )?;
    Ok(passed)
}
