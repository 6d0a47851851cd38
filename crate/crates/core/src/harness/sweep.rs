//! δ-sweep: how late must one look before the belief estimator's error
//! fraction drops below δ, empirically and per the closed-form predictors.

use serde::Serialize;

use crate::consensus::Regime;
use crate::dynamics::find_interior_equilibrium;
use crate::estimators::{predict_convergence_time, RegimeParams};
use crate::harness::config::ResolvedExperiment;
use crate::harness::report::{fmt_f64, write_csv, write_json};
use crate::harness::runner::{compute_experiment, HarnessError, RunOptions};

/// ε used when instantiating the consensus-side predictor from a measured
/// drift: X(t) ≈ c₁·t^{λ−ε}.
const CONSENSUS_EPSILON: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    /// First checkpoint where the belief error fraction is ≤ δ.
    pub t_star_empirical: Option<u64>,
    pub t_star_predicted: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AffineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Serialize)]
pub struct SweepReport {
    pub regime: Regime,
    pub rows: Vec<SweepRow>,
    /// Interior regimes: empirical t* against log(1/δ).
    pub interior_fit: Option<AffineFit>,
    /// Consensus regimes: log t* against log log(1/δ); slope ≈ 1/λ.
    pub consensus_fit: Option<AffineFit>,
    /// t*(δ) non-increasing in δ (holds by construction of first crossing).
    pub monotone: bool,
}

fn affine_fit(points: &[(f64, f64)]) -> Option<AffineFit> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let xbar = points.iter().map(|p| p.0).sum::<f64>() / n;
    let ybar = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - ybar).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Some(AffineFit {
        slope,
        intercept,
        r_squared,
    })
}

fn validate_deltas(x: &ResolvedExperiment, deltas: &[f64]) -> Result<(), HarnessError> {
    if deltas.is_empty() {
        return Err(HarnessError::InvalidArgument {
            what: "sweep needs at least one delta".into(),
        });
    }
    for pair in deltas.windows(2) {
        if pair[1] >= pair[0] {
            return Err(HarnessError::InvalidArgument {
                what: format!(
                    "deltas must be sorted strictly descending, got {} before {}",
                    pair[0], pair[1]
                ),
            });
        }
    }
    for &delta in deltas {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(HarnessError::InvalidArgument {
                what: format!("delta = {delta} outside (0,1)"),
            });
        }
        if delta * (x.replications as f64) < 10.0 {
            return Err(HarnessError::InsufficientReplications {
                delta,
                replications: x.replications,
            });
        }
    }
    Ok(())
}

/// Closed-form prediction of t*(δ), instantiated per regime: the interior
/// drift constant comes from the expected-dynamics equilibrium, the
/// consensus constant from the realized drift of replication 0.
fn predicted_t_star(
    x: &ResolvedExperiment,
    regime: Regime,
    lambda: Option<f64>,
    rep0_drift: &[f64],
    kappa: f64,
    delta: f64,
) -> Option<f64> {
    match regime {
        Regime::Interior => {
            let eq = find_interior_equilibrium(&x.net, &x.bias, 1e-10, 1_000_000).ok()?;
            let mu = x.net.neighborhood_average(&eq.beta);
            let mut worst: f64 = 0.0;
            for i in 0..x.net.n() {
                let f = crate::dynamics::conformity_probability(mu[i], x.bias.gamma(i)).ok()?;
                let k = (f - mu[i]).abs();
                let p =
                    predict_convergence_time(x.bias.gamma(i), kappa, delta, RegimeParams::Interior { k })
                        .ok()?;
                worst = worst.max(p.t_star);
            }
            Some(worst)
        }
        Regime::ToZero | Regime::ToOne => {
            let lambda = lambda?;
            let horizon = x.horizon as f64;
            let mut worst: f64 = 0.0;
            for i in 0..x.net.n() {
                let c1 = rep0_drift[i] / horizon.powf(lambda - CONSENSUS_EPSILON);
                if !(c1 > 0.0) {
                    return None;
                }
                let p = predict_convergence_time(
                    x.bias.gamma(i),
                    kappa,
                    delta,
                    RegimeParams::Consensus {
                        c1,
                        lambda,
                        epsilon: CONSENSUS_EPSILON,
                    },
                )
                .ok()?;
                worst = worst.max(p.t_star);
            }
            Some(worst)
        }
        Regime::Boundary => None,
    }
}

/// Run the experiment and tabulate empirical vs predicted convergence times
/// for each δ. Writes sweep.csv and sweep.json into the output directory.
pub fn sweep_delta(x: &ResolvedExperiment, deltas: &[f64]) -> Result<SweepReport, HarnessError> {
    validate_deltas(x, deltas)?;
    if !x.belief_enabled {
        return Err(HarnessError::InvalidArgument {
            what: "sweep requires the belief estimator to be enabled".into(),
        });
    }
    let (report, reps) = compute_experiment(x, &RunOptions::default())?;
    let curve: Vec<(u64, f64)> = report
        .error_curves
        .iter()
        .map(|c| (c.t, c.belief.expect("belief enabled")))
        .collect();
    let kappa = crate::dynamics::init_state(&x.net, &x.init)?.kappa();
    let lambda = report.consensus_lambda;
    let rep0_drift = reps[0].belief_drift_x_final.clone();

    let rows: Vec<SweepRow> = deltas
        .iter()
        .map(|&delta| SweepRow {
            delta,
            t_star_empirical: curve
                .iter()
                .find(|&&(_, err)| err <= delta)
                .map(|&(t, _)| t),
            t_star_predicted: predicted_t_star(
                x,
                report.regime.regime,
                lambda,
                &rep0_drift,
                kappa,
                delta,
            ),
        })
        .collect();

    let observed: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| {
            r.t_star_empirical
                .map(|t| ((1.0 / r.delta).ln(), t as f64))
        })
        .collect();
    let (interior_fit, consensus_fit) = match report.regime.regime {
        Regime::Interior => (affine_fit(&observed), None),
        Regime::ToZero | Regime::ToOne => {
            let loglog: Vec<(f64, f64)> = observed
                .iter()
                .filter(|&&(lx, t)| lx > 0.0 && t > 0.0)
                .map(|&(lx, t)| (lx.ln(), t.ln()))
                .collect();
            (None, affine_fit(&loglog))
        }
        Regime::Boundary => (None, None),
    };

    let monotone = rows
        .windows(2)
        .all(|w| match (w[0].t_star_empirical, w[1].t_star_empirical) {
            (Some(a), Some(b)) => a <= b,
            (None, Some(_)) => false,
            _ => true,
        });

    let sweep = SweepReport {
        regime: report.regime.regime,
        rows,
        interior_fit,
        consensus_fit,
        monotone,
    };

    std::fs::create_dir_all(&x.out_dir).map_err(|source| HarnessError::Io {
        path: x.out_dir.clone(),
        source,
    })?;
    let csv_rows: Vec<String> = sweep
        .rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{}",
                fmt_f64(r.delta),
                r.t_star_empirical
                    .map(|t| t.to_string())
                    .unwrap_or_default(),
                r.t_star_predicted.map(fmt_f64).unwrap_or_default()
            )
        })
        .collect();
    let refs: Vec<&str> = csv_rows.iter().map(String::as_str).collect();
    write_csv(
        &x.out_dir.join("sweep.csv"),
        "delta,t_star_empirical,t_star_predicted",
        &refs,
    )?;
    write_json(&x.out_dir.join("sweep.json"), &sweep)?;
    Ok(sweep)
}
