//! File emission. All numeric formatting uses the shortest round-trip
//! decimal representation so identical runs produce identical bytes.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::harness::config::ResolvedExperiment;
use crate::harness::runner::{merged_rows, HarnessError, RepOutput, RunOptions, RunReport};

pub const TRAJECTORY_HEADER: &str = "rep,t,agent,beta,mu,ones";
pub const ESTIMATES_HEADER: &str =
    "rep,t,agent,chi_hat,gamma_hat,phi_hat,phi_eq_hat,gamma_eq_hat,identifiable,tie";
pub const RATES_HEADER: &str = "rep,quantity,t,value";
pub const DIAGNOSTICS_HEADER: &str = "rep,agent,t,Z,X,Y,W,x,w,floor_x,bound_w";

/// Shortest round-trip decimal for f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_csv(path: &Path, header: &str, rows: &[&str]) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "{header}")?;
        for row in rows {
            writeln!(w, "{row}")?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable report");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'a str,
    base_seed: u64,
    horizon: u64,
    replications: u64,
    checkpoints: &'a [u64],
    replication_seeds: &'a [u64],
    config: &'a str,
}

#[derive(Serialize)]
struct RegimeFile<'a> {
    lambda_zero: f64,
    lambda_one: f64,
    regime: crate::consensus::Regime,
    tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    v: Option<&'a [f64]>,
}

pub(crate) fn write_outputs(
    x: &ResolvedExperiment,
    opts: &RunOptions,
    report: &RunReport,
    reps: &[RepOutput],
) -> Result<(), HarnessError> {
    let dir = &x.out_dir;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = |name: &str| -> PathBuf { dir.join(name) };

    write_json(
        &path("manifest.json"),
        &Manifest {
            version: &report.version,
            base_seed: x.base_seed,
            horizon: x.horizon,
            replications: x.replications,
            checkpoints: &x.checkpoints,
            replication_seeds: &report.seeds,
            config: &x.config_text,
        },
    )?;
    write_json(
        &path("regime.json"),
        &RegimeFile {
            lambda_zero: report.regime.lambda_zero,
            lambda_one: report.regime.lambda_one,
            regime: report.regime.regime,
            tolerance: report.regime.tolerance,
            v: report.perron_vector.as_deref(),
        },
    )?;
    write_json(&path("report.json"), report)?;

    let rows = merged_rows(reps);
    if opts.emit_trajectory {
        write_csv(&path("trajectory.csv"), TRAJECTORY_HEADER, &rows.traj)?;
    }
    if opts.emit_estimates {
        write_csv(&path("estimates.csv"), ESTIMATES_HEADER, &rows.est)?;
    }
    if opts.emit_rates && !rows.rates.is_empty() {
        write_csv(&path("rates.csv"), RATES_HEADER, &rows.rates)?;
    }
    if opts.emit_diagnostics && !rows.diag.is_empty() {
        write_csv(&path("diagnostics.csv"), DIAGNOSTICS_HEADER, &rows.diag)?;
    }
    Ok(())
}
