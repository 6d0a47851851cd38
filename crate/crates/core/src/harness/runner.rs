//! Replication fan-out and output assembly. Replications run in parallel on
//! independent derived seeds; each produces pre-formatted CSV rows plus local
//! aggregates, merged in replication order so re-runs are byte-identical.

use std::path::PathBuf;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::consensus::{
    self, classify, fit_rate, perron_functional, ConsensusError, ConsensusTarget,
    LinearizedProcess, PerronFunctional, RateFit, Regime, RegimeReport, CLASSIFY_TOL,
};
use crate::dynamics::{self, DynamicsError, Snapshot};
use crate::estimators::{
    belief_from_counts, equilibrium_belief_estimate, equilibrium_bias_estimate, mle_bias_from,
    EstimatorError,
};
use crate::harness::config::{ConfigError, ResolvedExperiment};
use crate::harness::report::{self, fmt_f64};
use crate::harness::seed;
use crate::likelihood::{DeclarationHistory, LikelihoodError};
use crate::martingale::{build_trace, drift_floor_check, verify_hard_bounds, HardBoundReport};

/// Gradient tolerance for the per-checkpoint MLE solves.
pub const MLE_TOL: f64 = 1e-10;

/// Float slack for the pathwise sandwich assertion.
const SANDWICH_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("replication {rep}: {message}")]
    Rep { rep: u64, message: String },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid argument: {what}")]
    InvalidArgument { what: String },
    #[error("need delta * replications >= 10 for every delta; got delta = {delta} with {replications} replications")]
    InsufficientReplications { delta: f64, replications: u64 },
}

impl HarnessError {
    /// True for errors caused by the configuration or CLI arguments rather
    /// than the run itself (exit code 2 territory).
    pub fn is_usage_error(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::InvalidArgument { .. }
                | HarnessError::InsufficientReplications { .. }
        )
    }
}

/// Which file families to emit.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub emit_trajectory: bool,
    pub emit_estimates: bool,
    pub emit_rates: bool,
    pub emit_diagnostics: bool,
}

impl RunOptions {
    pub fn everything() -> Self {
        RunOptions {
            emit_trajectory: true,
            emit_estimates: true,
            emit_rates: true,
            emit_diagnostics: true,
        }
    }
}

/// Error fractions at one checkpoint, aggregated over replications × agents.
/// Ties count as errors.
#[derive(Debug, Clone, Serialize)]
pub struct CheckpointErrors {
    pub t: u64,
    pub belief: Option<f64>,
    pub mle: Option<f64>,
    pub equilibrium: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentFinal {
    pub rep: u64,
    pub agent: usize,
    pub gamma_true: f64,
    pub phi_true: bool,
    pub chi_hat: Option<f64>,
    pub gamma_hat: Option<f64>,
    pub identifiable: Option<bool>,
    pub mle_correct: Option<bool>,
    pub belief_correct: Option<bool>,
    pub belief_statistic: Option<f64>,
    pub equilibrium_gamma: Option<f64>,
    pub equilibrium_correct: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateFitSummary {
    /// λ − 1 for the consensus side of the run.
    pub target_exponent: f64,
    pub window: (f64, f64),
    pub v_exponents: Vec<f64>,
    pub v_exponent_mean: f64,
    /// Per-agent exponents averaged over replications.
    pub agent_exponent_mean: Vec<f64>,
    /// agent_exponents[rep][agent].
    pub agent_exponents: Vec<Vec<f64>>,
    pub v_r_squared_mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleSummary {
    pub factor: f64,
    pub traces: u64,
    pub hard: HardBoundReport,
    pub drift_pointwise_violations: usize,
    pub drift_growth_failures: usize,
    pub y_mean: f64,
    pub y_std_error: f64,
    pub y_mean_within_3se: bool,
    /// Fraction of traces with Z(t) ≤ 0 per checkpoint.
    pub z_error_fraction: Vec<f64>,
    /// Mean Freedman envelope exp(−ξ·max(0, X(t)−2))/(1−e^{−ξ}) per checkpoint.
    pub freedman_envelope: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoupledSummary {
    pub start_threshold: f64,
    pub validity_radius: f64,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub started_reps: u64,
    pub invalidated_reps: u64,
    pub sandwich_violations: u64,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub version: String,
    pub regime: RegimeReport,
    /// λ of the consensus side (ΓW for ToZero, Γ⁻¹W for ToOne).
    pub consensus_lambda: Option<f64>,
    /// Left Perron vector behind V(β), when a consensus side exists.
    pub perron_vector: Option<Vec<f64>>,
    pub checkpoints: Vec<u64>,
    pub seeds: Vec<u64>,
    pub band_violations: u64,
    pub error_curves: Vec<CheckpointErrors>,
    pub final_estimates: Vec<AgentFinal>,
    pub rate: Option<RateFitSummary>,
    pub martingale: Option<MartingaleSummary>,
    pub coupled: Option<CoupledSummary>,
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl RunReport {
    /// Any assertion-level failure that should flip the process exit code.
    pub fn assertion_failures(&self) -> u64 {
        let mut total = self.band_violations;
        if let Some(m) = &self.martingale {
            total += m.hard.total() as u64 + m.drift_pointwise_violations as u64;
        }
        if let Some(c) = &self.coupled {
            total += c.sandwich_violations;
        }
        total
    }
}

struct RepMartingale {
    hard: HardBoundReport,
    drift_violations: usize,
    growth_failures: usize,
    y_sum: f64,
    y_sumsq: f64,
    y_count: u64,
    z_errors_by_cp: Vec<u32>,
    env_sum_by_cp: Vec<f64>,
    traces: u64,
}

struct RepCoupled {
    started: bool,
    invalidated: bool,
    sandwich_violations: u64,
}

pub(crate) struct RepOutput {
    seed: u64,
    band_violations: u64,
    traj_rows: Vec<String>,
    est_rows: Vec<String>,
    diag_rows: Vec<String>,
    rate_rows: Vec<String>,
    belief_errors: Vec<u32>,
    mle_errors: Vec<u32>,
    eq_errors: Vec<u32>,
    v_fit: Option<RateFit>,
    agent_fits: Vec<RateFit>,
    finals: Vec<AgentFinal>,
    martingale: Option<RepMartingale>,
    coupled: Option<RepCoupled>,
    /// Per-agent realized belief-estimator drift Σ|f(μ,γ) − μ| at the horizon.
    pub(crate) belief_drift_x_final: Vec<f64>,
}

fn run_replication(
    x: &ResolvedExperiment,
    functional: Option<&PerronFunctional>,
    opts: &RunOptions,
    rep: u64,
) -> Result<RepOutput, HarnessError> {
    let net = &x.net;
    let bias = &x.bias;
    let n = net.n();
    let rep_seed = seed::mix(x.base_seed, rep);
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    let mut state = dynamics::init_state(net, &x.init)?;

    let couple_cfg = x.coupled.as_ref().filter(|_| functional.is_some());
    let mut procs: Vec<LinearizedProcess> = Vec::new();
    let mut coupled = couple_cfg.map(|_| RepCoupled {
        started: false,
        invalidated: false,
        sandwich_violations: 0,
    });
    let (alpha_minus, alpha_plus) = couple_cfg
        .map(|c| consensus::alpha_bounds(bias, c.validity_radius))
        .unwrap_or((1.0, 1.0));

    let mut snapshots: Vec<Snapshot> = Vec::with_capacity(x.checkpoints.len());
    // (t, h−, h+) samples while the coupling is live.
    let mut h_samples: Vec<(u64, f64, f64)> = Vec::new();
    let mut cp_iter = x.checkpoints.iter().copied().peekable();

    while state.t() < x.horizon {
        match (&mut coupled, couple_cfg) {
            (Some(track), Some(cfg)) if track.started => {
                let f = functional.expect("coupling requires a functional");
                consensus::coupled_linearized_step(
                    &mut state, net, bias, f, &mut procs, &mut rng,
                )?;
                let max_beta = state.beta().iter().copied().fold(0.0, f64::max);
                if max_beta > cfg.validity_radius {
                    track.invalidated = true;
                }
                if !track.invalidated {
                    let v = f.evaluate(state.beta());
                    if procs[0].h > v + SANDWICH_SLACK || v > procs[1].h + SANDWICH_SLACK {
                        track.sandwich_violations += 1;
                    }
                }
            }
            _ => dynamics::step(&mut state, net, bias, &mut rng),
        }
        if cp_iter.peek() == Some(&state.t()) {
            cp_iter.next();
            snapshots.push(Snapshot {
                t: state.t(),
                beta: state.beta().to_vec(),
                mu: state.mu().to_vec(),
                ones: state.ones().to_vec(),
                mu_cumsum: state.mu_cumsum().to_vec(),
            });
            if let (Some(track), Some(cfg)) = (&mut coupled, couple_cfg) {
                let f = functional.expect("coupling requires a functional");
                let max_beta = state.beta().iter().copied().fold(0.0, f64::max);
                if !track.started && max_beta <= cfg.start_threshold {
                    track.started = true;
                    let v = f.evaluate(state.beta());
                    procs = vec![
                        LinearizedProcess {
                            alpha: alpha_minus,
                            h: v,
                        },
                        LinearizedProcess {
                            alpha: alpha_plus,
                            h: v,
                        },
                    ];
                }
                if track.started {
                    h_samples.push((state.t(), procs[0].h, procs[1].h));
                }
            }
        }
    }

    let belief_drift_x_final: Vec<f64> = (0..n)
        .map(|agent| {
            state
                .history(agent)
                .iter()
                .map(|&(mu, _)| (crate::dynamics::conformity_probability(mu, bias.gamma(agent))
                    .expect("interior mu")
                    - mu)
                    .abs())
                .sum()
        })
        .collect();

    let mut out = RepOutput {
        seed: rep_seed,
        band_violations: state.band_violations(),
        traj_rows: Vec::new(),
        est_rows: Vec::new(),
        diag_rows: Vec::new(),
        rate_rows: Vec::new(),
        belief_errors: vec![0; snapshots.len()],
        mle_errors: vec![0; snapshots.len()],
        eq_errors: vec![0; snapshots.len()],
        v_fit: None,
        agent_fits: Vec::new(),
        finals: Vec::new(),
        martingale: None,
        coupled,
        belief_drift_x_final,
    };

    if opts.emit_trajectory {
        for snap in &snapshots {
            for agent in 0..n {
                out.traj_rows.push(format!(
                    "{rep},{},{agent},{},{},{}",
                    snap.t,
                    fmt_f64(snap.beta[agent]),
                    fmt_f64(snap.mu[agent]),
                    snap.ones[agent]
                ));
            }
        }
    }

    // Estimator sweep over checkpoints. MLE restarts from the previous
    // checkpoint's minimizer.
    let mut warm = vec![0.0f64; n];
    for (k, snap) in snapshots.iter().enumerate() {
        for agent in 0..n {
            let phi = bias.phi(agent);
            let belief = x
                .belief_enabled
                .then(|| belief_from_counts(snap.ones[agent], snap.mu_cumsum[agent]));
            if let Some(b) = &belief {
                if !b.phi_hat.matches(phi) {
                    out.belief_errors[k] += 1;
                }
            }
            let mle = if x.mle_enabled {
                let prefix = &state.history(agent)[..(snap.t - 1) as usize];
                let h = DeclarationHistory::from_pairs(prefix)?;
                let e = mle_bias_from(&h, MLE_TOL, warm[agent])?;
                warm[agent] = e.chi_hat.clamp(-30.0, 30.0);
                if e.phi_hat != phi {
                    out.mle_errors[k] += 1;
                }
                Some(e)
            } else {
                None
            };
            let (eq_gamma, eq_phi) = if x.equilibrium_enabled {
                let g = equilibrium_bias_estimate(snap.beta[agent], snap.mu[agent]).ok();
                let p = equilibrium_belief_estimate(snap.beta[agent], snap.mu[agent]);
                if !p.matches(phi) {
                    out.eq_errors[k] += 1;
                }
                (g, Some(p))
            } else {
                (None, None)
            };

            if opts.emit_estimates {
                let (chi_s, gamma_s, ident_s) = match &mle {
                    Some(e) => (
                        fmt_f64(e.chi_hat),
                        fmt_f64(e.gamma_hat),
                        e.identifiable.to_string(),
                    ),
                    None => (String::new(), String::new(), String::new()),
                };
                let (phi_s, tie_s) = match &belief {
                    Some(b) => (fmt_f64(b.phi_hat.as_f64()), b.phi_hat.is_tie().to_string()),
                    None => (String::new(), String::new()),
                };
                let (phi_eq_s, gamma_eq_s) = match (&eq_phi, &eq_gamma) {
                    (Some(p), g) => (
                        fmt_f64(p.as_f64()),
                        g.map(fmt_f64).unwrap_or_default(),
                    ),
                    (None, _) => (String::new(), String::new()),
                };
                out.est_rows.push(format!(
                    "{rep},{},{agent},{chi_s},{gamma_s},{phi_s},{phi_eq_s},{gamma_eq_s},{ident_s},{tie_s}",
                    snap.t
                ));
            }

            if k + 1 == snapshots.len() {
                out.finals.push(AgentFinal {
                    rep,
                    agent,
                    gamma_true: bias.gamma(agent),
                    phi_true: phi,
                    chi_hat: mle.as_ref().map(|e| e.chi_hat),
                    gamma_hat: mle.as_ref().map(|e| e.gamma_hat),
                    identifiable: mle.as_ref().map(|e| e.identifiable),
                    mle_correct: mle.as_ref().map(|e| e.phi_hat == phi),
                    belief_correct: belief.as_ref().map(|b| b.phi_hat.matches(phi)),
                    belief_statistic: belief.as_ref().map(|b| b.statistic),
                    equilibrium_gamma: eq_gamma,
                    equilibrium_correct: eq_phi.map(|p| p.matches(phi)),
                });
            }
        }
    }

    // Rate series and per-replication fits on the consensus side.
    if let (Some(window), Some(f)) = (x.rate_window, functional) {
        let gap = |b: f64| match f.target {
            ConsensusTarget::Zero => b,
            ConsensusTarget::One => 1.0 - b,
        };
        let w_abs = (
            window[0] * x.horizon as f64,
            window[1] * x.horizon as f64,
        );
        let v_series: Vec<(f64, f64)> = snapshots
            .iter()
            .map(|s| (s.t as f64, f.evaluate(&s.beta)))
            .collect();
        if opts.emit_rates {
            for (t, v) in &v_series {
                out.rate_rows
                    .push(format!("{rep},V,{},{}", *t as u64, fmt_f64(*v)));
            }
        }
        let mut v_fit = fit_rate(&v_series, w_abs)?;
        v_fit.target = Some(f.lambda - 1.0);
        for agent in 0..n {
            let series: Vec<(f64, f64)> = snapshots
                .iter()
                .map(|s| (s.t as f64, gap(s.beta[agent])))
                .collect();
            if opts.emit_rates {
                for (t, v) in &series {
                    out.rate_rows
                        .push(format!("{rep},beta:{agent},{},{}", *t as u64, fmt_f64(*v)));
                }
            }
            let mut fit = fit_rate(&series, w_abs)?;
            fit.target = Some(f.lambda - 1.0);
            out.agent_fits.push(fit);
        }
        if opts.emit_rates {
            for (t, hlo, hhi) in &h_samples {
                out.rate_rows
                    .push(format!("{rep},h_minus,{t},{}", fmt_f64(*hlo)));
                out.rate_rows
                    .push(format!("{rep},h_plus,{t},{}", fmt_f64(*hhi)));
            }
            out.rate_rows.push(format!(
                "{rep},fit:V:exponent,0,{}",
                fmt_f64(v_fit.exponent)
            ));
            out.rate_rows.push(format!(
                "{rep},fit:V:intercept,0,{}",
                fmt_f64(v_fit.intercept)
            ));
            out.rate_rows
                .push(format!("{rep},fit:V:r2,0,{}", fmt_f64(v_fit.r_squared)));
            for (agent, fit) in out.agent_fits.iter().enumerate() {
                out.rate_rows.push(format!(
                    "{rep},fit:beta:{agent}:exponent,0,{}",
                    fmt_f64(fit.exponent)
                ));
            }
        }
        out.v_fit = Some(v_fit);
    }

    // Martingale diagnostics on the pair (γᵢ, factor·γᵢ).
    if let Some(factor) = x.martingale_factor {
        let mut rm = RepMartingale {
            hard: HardBoundReport::default(),
            drift_violations: 0,
            growth_failures: 0,
            y_sum: 0.0,
            y_sumsq: 0.0,
            y_count: 0,
            z_errors_by_cp: vec![0; snapshots.len()],
            env_sum_by_cp: vec![0.0; snapshots.len()],
            traces: 0,
        };
        for agent in 0..n {
            let gamma1 = bias.gamma(agent);
            let gamma2 = gamma1 * factor;
            let h = DeclarationHistory::from_pairs(state.history(agent))?;
            let trace = build_trace(&h, gamma1, gamma2)
                .map_err(|e| HarnessError::Rep {
                    rep,
                    message: format!("agent {agent}: {e}"),
                })?;
            rm.hard.merge(&verify_hard_bounds(&trace));
            let drift = drift_floor_check(&trace, state.kappa());
            rm.drift_violations += drift.pointwise_violations;
            if !drift.growth_ok {
                rm.growth_failures += 1;
            }
            for y in &trace.y_step {
                rm.y_sum += y;
                rm.y_sumsq += y * y;
            }
            rm.y_count += trace.len() as u64;
            rm.traces += 1;
            // Tail envelope from the test-success machinery: probability of
            // any separator s ≥ X(t) − 2 is at most e^{−ξ s}/(1 − e^{−ξ}).
            let xi = 1.0 / (4.0 * trace.c1 + 2.0 * trace.alpha_step / 3.0);
            for (k, snap) in snapshots.iter().enumerate() {
                let idx = (snap.t - 2) as usize;
                if trace.z_cum[idx] <= 0.0 {
                    rm.z_errors_by_cp[k] += 1;
                }
                let s0 = (trace.x_cum[idx] - 2.0).max(0.0);
                let env = ((-xi * s0).exp() / (1.0 - (-xi).exp())).min(1.0);
                rm.env_sum_by_cp[k] += env;
            }
            if opts.emit_diagnostics {
                for snap in &snapshots {
                    let idx = (snap.t - 2) as usize;
                    out.diag_rows.push(format!(
                        "{rep},{agent},{},{},{},{},{},{},{},{},{}",
                        snap.t,
                        fmt_f64(trace.z_cum[idx]),
                        fmt_f64(trace.x_cum[idx]),
                        fmt_f64(trace.y_cum[idx]),
                        fmt_f64(trace.w_cum[idx]),
                        fmt_f64(trace.x_step[idx]),
                        fmt_f64(trace.w_step[idx]),
                        fmt_f64(trace.x_floor[idx]),
                        fmt_f64(trace.c1 * trace.x_step[idx])
                    ));
                }
            }
        }
        out.martingale = Some(rm);
    }

    Ok(out)
}

/// Run every replication, merge outputs, write the configured files under
/// `out_dir`, and return the aggregate report.
pub fn run_experiment(x: &ResolvedExperiment, opts: &RunOptions) -> Result<RunReport, HarnessError> {
    let (run_report, reps) = compute_experiment(x, opts)?;
    report::write_outputs(x, opts, &run_report, &reps)?;
    Ok(run_report)
}

/// The computation behind `run_experiment`, without file emission.
pub(crate) fn compute_experiment(
    x: &ResolvedExperiment,
    opts: &RunOptions,
) -> Result<(RunReport, Vec<RepOutput>), HarnessError> {
    let started = std::time::Instant::now();
    let regime = classify(&x.net, &x.bias, CLASSIFY_TOL)?;
    let functional = match regime.regime {
        Regime::ToZero => Some(perron_functional(&x.net, &x.bias, ConsensusTarget::Zero)?),
        Regime::ToOne => Some(perron_functional(&x.net, &x.bias, ConsensusTarget::One)?),
        _ => None,
    };
    if x.coupled.is_some() && regime.regime != Regime::ToZero {
        return Err(ConsensusError::RegimeMismatch {
            why: format!(
                "coupled diagnostics need a ToZero run, classify() reports {}",
                regime.regime
            ),
        }
        .into());
    }
    if x.rate_window.is_some() && functional.is_none() {
        return Err(ConsensusError::RegimeMismatch {
            why: format!(
                "rate diagnostics need a consensus regime, classify() reports {}",
                regime.regime
            ),
        }
        .into());
    }

    let reps: Vec<RepOutput> = (0..x.replications)
        .into_par_iter()
        .map(|rep| run_replication(x, functional.as_ref(), opts, rep))
        .collect::<Result<Vec<_>, _>>()?;

    let seeds: Vec<u64> = reps.iter().map(|r| r.seed).collect();
    let band_violations: u64 = reps.iter().map(|r| r.band_violations).sum();
    let n = x.net.n();
    let denom = (x.replications as usize * n) as f64;

    let error_curves: Vec<CheckpointErrors> = x
        .checkpoints
        .iter()
        .enumerate()
        .map(|(k, &t)| CheckpointErrors {
            t,
            belief: x.belief_enabled.then(|| {
                reps.iter().map(|r| r.belief_errors[k] as f64).sum::<f64>() / denom
            }),
            mle: x
                .mle_enabled
                .then(|| reps.iter().map(|r| r.mle_errors[k] as f64).sum::<f64>() / denom),
            equilibrium: x
                .equilibrium_enabled
                .then(|| reps.iter().map(|r| r.eq_errors[k] as f64).sum::<f64>() / denom),
        })
        .collect();

    let rate = functional.as_ref().and_then(|f| {
        x.rate_window?;
        let v_exponents: Vec<f64> = reps
            .iter()
            .filter_map(|r| r.v_fit.as_ref().map(|fit| fit.exponent))
            .collect();
        let v_exponent_mean = v_exponents.iter().sum::<f64>() / v_exponents.len() as f64;
        let v_r_squared_mean = reps
            .iter()
            .filter_map(|r| r.v_fit.as_ref().map(|fit| fit.r_squared))
            .sum::<f64>()
            / v_exponents.len() as f64;
        let agent_exponent_mean: Vec<f64> = (0..n)
            .map(|agent| {
                reps.iter()
                    .map(|r| r.agent_fits[agent].exponent)
                    .sum::<f64>()
                    / reps.len() as f64
            })
            .collect();
        let agent_exponents: Vec<Vec<f64>> = reps
            .iter()
            .map(|r| r.agent_fits.iter().map(|fit| fit.exponent).collect())
            .collect();
        let window = reps[0].v_fit.as_ref().map(|fit| fit.window).unwrap();
        Some(RateFitSummary {
            target_exponent: f.lambda - 1.0,
            window,
            v_exponents,
            v_exponent_mean,
            agent_exponent_mean,
            agent_exponents,
            v_r_squared_mean,
        })
    });

    let martingale = x.martingale_factor.map(|factor| {
        let mut hard = HardBoundReport::default();
        let mut drift_pointwise_violations = 0;
        let mut drift_growth_failures = 0;
        let (mut y_sum, mut y_sumsq, mut y_count) = (0.0, 0.0, 0u64);
        let mut traces = 0u64;
        let mut z_errors = vec![0u64; x.checkpoints.len()];
        let mut env_sums = vec![0.0f64; x.checkpoints.len()];
        for r in &reps {
            let rm = r.martingale.as_ref().expect("factor set for every rep");
            hard.merge(&rm.hard);
            drift_pointwise_violations += rm.drift_violations;
            drift_growth_failures += rm.growth_failures;
            y_sum += rm.y_sum;
            y_sumsq += rm.y_sumsq;
            y_count += rm.y_count;
            traces += rm.traces;
            for (k, &e) in rm.z_errors_by_cp.iter().enumerate() {
                z_errors[k] += e as u64;
            }
            for (k, &e) in rm.env_sum_by_cp.iter().enumerate() {
                env_sums[k] += e;
            }
        }
        let y_mean = y_sum / y_count as f64;
        let y_var = (y_sumsq / y_count as f64 - y_mean * y_mean).max(0.0);
        let y_std_error = (y_var / y_count as f64).sqrt();
        MartingaleSummary {
            factor,
            traces,
            hard,
            drift_pointwise_violations,
            drift_growth_failures,
            y_mean,
            y_std_error,
            y_mean_within_3se: y_mean.abs() <= 3.0 * y_std_error,
            z_error_fraction: z_errors
                .iter()
                .map(|&e| e as f64 / traces as f64)
                .collect(),
            freedman_envelope: env_sums.iter().map(|&s| s / traces as f64).collect(),
        }
    });

    let coupled = x.coupled.as_ref().map(|cfg| {
        let (alpha_minus, alpha_plus) = consensus::alpha_bounds(&x.bias, cfg.validity_radius);
        let mut s = CoupledSummary {
            start_threshold: cfg.start_threshold,
            validity_radius: cfg.validity_radius,
            alpha_minus,
            alpha_plus,
            started_reps: 0,
            invalidated_reps: 0,
            sandwich_violations: 0,
        };
        for r in &reps {
            if let Some(c) = &r.coupled {
                s.started_reps += c.started as u64;
                s.invalidated_reps += c.invalidated as u64;
                s.sandwich_violations += c.sandwich_violations;
            }
        }
        s
    });

    let final_estimates: Vec<AgentFinal> =
        reps.iter().flat_map(|r| r.finals.iter().cloned()).collect();

    let run_report = RunReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        consensus_lambda: functional.as_ref().map(|f| f.lambda),
        perron_vector: functional.as_ref().map(|f| f.v.clone()),
        regime,
        checkpoints: x.checkpoints.clone(),
        seeds,
        band_violations,
        error_curves,
        final_estimates,
        rate,
        martingale,
        coupled,
        wall_clock: started.elapsed(),
    };

    Ok((run_report, reps))
}

pub(crate) struct MergedRows<'a> {
    pub traj: Vec<&'a str>,
    pub est: Vec<&'a str>,
    pub rates: Vec<&'a str>,
    pub diag: Vec<&'a str>,
}

pub(crate) fn merged_rows(reps: &[RepOutput]) -> MergedRows<'_> {
    MergedRows {
        traj: reps
            .iter()
            .flat_map(|r| r.traj_rows.iter().map(String::as_str))
            .collect(),
        est: reps
            .iter()
            .flat_map(|r| r.est_rows.iter().map(String::as_str))
            .collect(),
        rates: reps
            .iter()
            .flat_map(|r| r.rate_rows.iter().map(String::as_str))
            .collect(),
        diag: reps
            .iter()
            .flat_map(|r| r.diag_rows.iter().map(String::as_str))
            .collect(),
    }
}
