//! CLI over the experiment harness. Exit codes: 0 success, 2 config error,
//! 3 runtime assertion failure (μ-band, martingale hard bounds, coupling
//! sandwich), 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use opinion_urn::harness::{
    self, classify_experiment, run_experiment, sweep_delta, ConfigError, HarnessError,
    Overrides, ResolvedExperiment, RunOptions, RunReport,
};

#[derive(Parser)]
#[command(
    name = "opinion-urn",
    about = "Interacting Polya urn opinion dynamics: simulate, estimate, classify, diagnose",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override run.base_seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override run.horizon.
    #[arg(long, value_name = "N")]
    horizon: Option<u64>,
    /// Override run.replications.
    #[arg(long, value_name = "N")]
    reps: Option<u64>,
    /// Output directory (overrides output.dir).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and write trajectory checkpoints.
    Simulate(CommonArgs),
    /// Simulate and evaluate configured estimators at every checkpoint.
    Estimate(CommonArgs),
    /// Classify the consensus regime (no simulation).
    Classify(CommonArgs),
    /// Simulate and fit decay exponents for V(beta) and per-agent beta.
    Rate(CommonArgs),
    /// Simulate and run martingale/coupling diagnostics.
    Diagnose(CommonArgs),
    /// Empirical vs predicted convergence time per error threshold delta.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated thresholds, strictly descending, e.g. 0.5,0.2,0.1
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        deltas: Vec<f64>,
    },
}

fn resolve(common: &CommonArgs) -> Result<ResolvedExperiment, ConfigError> {
    let overrides = Overrides {
        seed: common.seed,
        horizon: common.horizon,
        replications: common.reps,
        out_dir: common.out.clone(),
    };
    harness::load(&common.config, &overrides)
}

fn finish_run(report: &RunReport) -> ExitCode {
    eprintln!(
        "regime {} (lambda0 = {:.6}, lambda1 = {:.6}); {} replications in {:.2?}",
        report.regime.regime,
        report.regime.lambda_zero,
        report.regime.lambda_one,
        report.seeds.len(),
        report.wall_clock
    );
    let failures = report.assertion_failures();
    if failures > 0 {
        eprintln!("ASSERTION FAILURES: {failures}");
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Simulate(common) => {
            let x = resolve(&common)?;
            let report = run_experiment(
                &x,
                &RunOptions {
                    emit_trajectory: true,
                    ..Default::default()
                },
            )?;
            Ok(finish_run(&report))
        }
        Command::Estimate(common) => {
            let x = resolve(&common)?;
            let report = run_experiment(
                &x,
                &RunOptions {
                    emit_estimates: true,
                    ..Default::default()
                },
            )?;
            Ok(finish_run(&report))
        }
        Command::Classify(common) => {
            let x = resolve(&common)?;
            let report = classify_experiment(&x)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            Ok(ExitCode::SUCCESS)
        }
        Command::Rate(common) => {
            let x = resolve(&common)?;
            let report = run_experiment(
                &x,
                &RunOptions {
                    emit_rates: true,
                    ..Default::default()
                },
            )?;
            if let Some(rate) = &report.rate {
                eprintln!(
                    "mean V exponent {:.4} (target {:.4})",
                    rate.v_exponent_mean, rate.target_exponent
                );
            }
            Ok(finish_run(&report))
        }
        Command::Diagnose(common) => {
            let x = resolve(&common)?;
            let report = run_experiment(
                &x,
                &RunOptions {
                    emit_diagnostics: true,
                    ..Default::default()
                },
            )?;
            Ok(finish_run(&report))
        }
        Command::Sweep { common, deltas } => {
            let x = resolve(&common)?;
            let sweep = sweep_delta(&x, &deltas)?;
            println!("{}", serde_json::to_string_pretty(&sweep).expect("serializable"));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) if e.is_usage_error() => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
