//! Reproducible experiment orchestration: config parsing/validation,
//! deterministic replication fan-out, checkpointed estimator evaluation,
//! diagnostics, and the CSV/JSON file contract.

pub mod config;
pub mod report;
pub mod runner;
pub mod seed;
pub mod sweep;

pub use config::{
    geometric_checkpoints, load, load_config, parse_config, resolve, ConfigError,
    ExperimentConfig, Overrides, ResolvedExperiment,
};
pub use runner::{run_experiment, HarnessError, RunOptions, RunReport};
pub use sweep::{sweep_delta, SweepReport};

use crate::consensus::{classify, perron_functional, ConsensusTarget, Regime, CLASSIFY_TOL};

/// Classify only (no simulation) and write regime.json.
pub fn classify_experiment(x: &ResolvedExperiment) -> Result<crate::consensus::RegimeReport, HarnessError> {
    let report = classify(&x.net, &x.bias, CLASSIFY_TOL)?;
    let v = match report.regime {
        Regime::ToZero => Some(perron_functional(&x.net, &x.bias, ConsensusTarget::Zero)?.v),
        Regime::ToOne => Some(perron_functional(&x.net, &x.bias, ConsensusTarget::One)?.v),
        _ => None,
    };
    std::fs::create_dir_all(&x.out_dir).map_err(|source| HarnessError::Io {
        path: x.out_dir.clone(),
        source,
    })?;
    #[derive(serde::Serialize)]
    struct RegimeFile<'a> {
        lambda_zero: f64,
        lambda_one: f64,
        regime: Regime,
        tolerance: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        v: Option<&'a [f64]>,
    }
    report::write_json(
        &x.out_dir.join("regime.json"),
        &RegimeFile {
            lambda_zero: report.lambda_zero,
            lambda_one: report.lambda_one,
            regime: report.regime,
            tolerance: report.tolerance,
            v: v.as_deref(),
        },
    )?;
    Ok(report)
}
