//! Consensus classification through the spectral radii of ΓW and Γ⁻¹W, the
//! Perron functional V(β) = vᵀβ, the R(t,η) decay ratio with its Gautschi
//! sandwich, the maximally-coupled linearized process bounding V pathwise,
//! and log-log rate fitting.

use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::dynamics::{step_with_uniforms, BiasProfile, SimState};
use crate::graph::{perron_default, scaled_matrix, GraphError, Network};
use rand::Rng;

#[derive(Debug, Error)]
pub enum ConsensusError {
    #[error(transparent)]
    Spectral(#[from] GraphError),
    #[error("domain error: {what}")]
    DomainError { what: String },
    #[error("operation requires the consensus-to-zero regime ({why})")]
    RegimeMismatch { why: String },
    #[error("need at least {needed} checkpoints in the fit window, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("series value {value} at t = {t} is not positive")]
    NonPositiveValue { t: f64, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    ToZero,
    ToOne,
    Interior,
    Boundary,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::ToZero => "ToZero",
            Regime::ToOne => "ToOne",
            Regime::Interior => "Interior",
            Regime::Boundary => "Boundary",
        };
        f.write_str(s)
    }
}

/// Classification of a (network, bias) pair by the two spectral radii.
#[derive(Debug, Clone, Serialize)]
pub struct RegimeReport {
    /// λ_max(ΓW); ≤ 1 sends all declarations to 0.
    pub lambda_zero: f64,
    /// λ_max(Γ⁻¹W); ≤ 1 sends all declarations to 1.
    pub lambda_one: f64,
    pub regime: Regime,
    pub tolerance: f64,
}

pub const CLASSIFY_TOL: f64 = 1e-9;

/// Consensus to 0 needs λ_max(ΓW) ≤ 1 with the other radius above 1 (and
/// symmetrically for consensus to 1); radii within `tolerance` of 1 are
/// reported as Boundary rather than forced to a side.
pub fn classify(
    net: &Network,
    bias: &BiasProfile,
    tolerance: f64,
) -> Result<RegimeReport, ConsensusError> {
    let m_zero = scaled_matrix(net, bias.gammas(), false)?;
    let m_one = scaled_matrix(net, bias.gammas(), true)?;
    let lambda_zero = perron_default(&m_zero)?.radius;
    let lambda_one = perron_default(&m_one)?.radius;
    let below = |l: f64| l <= 1.0 - tolerance;
    let above = |l: f64| l > 1.0 + tolerance;
    let regime = if below(lambda_zero) && above(lambda_one) {
        Regime::ToZero
    } else if below(lambda_one) && above(lambda_zero) {
        Regime::ToOne
    } else if above(lambda_zero) && above(lambda_one) {
        Regime::Interior
    } else {
        Regime::Boundary
    };
    Ok(RegimeReport {
        lambda_zero,
        lambda_one,
        regime,
        tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConsensusTarget {
    Zero,
    One,
}

/// Linear functional V(β) = vᵀβ built on the positive left Perron vector of
/// the scaled adjacency (ΓW for target Zero, Γ⁻¹W with β ↦ 1−β for One).
#[derive(Debug, Clone, Serialize)]
pub struct PerronFunctional {
    pub target: ConsensusTarget,
    pub lambda: f64,
    /// Positive, vᵀ1 = 1.
    pub v: Vec<f64>,
    /// Whether classify() agrees with the requested target.
    pub regime_consistent: bool,
}

impl PerronFunctional {
    pub fn evaluate(&self, beta: &[f64]) -> f64 {
        let dot: f64 = self.v.iter().zip(beta).map(|(v, b)| v * b).sum();
        match self.target {
            ConsensusTarget::Zero => dot,
            ConsensusTarget::One => 1.0 - dot,
        }
    }
}

pub fn perron_functional(
    net: &Network,
    bias: &BiasProfile,
    target: ConsensusTarget,
) -> Result<PerronFunctional, ConsensusError> {
    let matrix = scaled_matrix(net, bias.gammas(), target == ConsensusTarget::One)?;
    let spectral = perron_default(&matrix)?;
    let report = classify(net, bias, CLASSIFY_TOL)?;
    let regime_consistent = matches!(
        (target, report.regime),
        (ConsensusTarget::Zero, Regime::ToZero) | (ConsensusTarget::One, Regime::ToOne)
    );
    Ok(PerronFunctional {
        target,
        lambda: spectral.radius,
        v: spectral.left_vector,
        regime_consistent,
    })
}

/// R(t, η) = Π_{τ=0}^{t−1} (τ+η)/(τ+1) = Γ(t+η)/(Γ(η)Γ(t+1)), computed in
/// log space. R(t, 1) = 1 exactly.
pub fn ratio_r(t: u64, eta: f64) -> Result<f64, ConsensusError> {
    if t < 1 {
        return Err(ConsensusError::DomainError {
            what: format!("t = {t} must be at least 1"),
        });
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(ConsensusError::DomainError {
            what: format!("eta = {eta} outside (0, 1]"),
        });
    }
    if eta == 1.0 {
        return Ok(1.0);
    }
    let t = t as f64;
    Ok((ln_gamma(t + eta) - ln_gamma(eta) - ln_gamma(t + 1.0)).exp())
}

/// Gautschi sandwich: 1/(Γ(η)(t+1)^{1−η}) ≤ R(t,η) ≤ 1/(Γ(η)t^{1−η}).
pub fn ratio_r_bounds(t: u64, eta: f64) -> Result<(f64, f64), ConsensusError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(ConsensusError::DomainError {
            what: format!("eta = {eta} outside (0, 1)"),
        });
    }
    let g = ln_gamma(eta).exp();
    let t = t as f64;
    Ok((
        1.0 / (g * (t + 1.0).powf(1.0 - eta)),
        1.0 / (g * t.powf(1.0 - eta)),
    ))
}

/// One h^α process riding a simulation, maximally coupled with the real
/// declarations through a shared per-agent uniform.
#[derive(Debug, Clone)]
pub struct LinearizedProcess {
    pub alpha: f64,
    pub h: f64,
}

/// Per-agent ratio f(μ,γ)/(γμ) = 1/(1+(γ−1)μ) is monotone in μ, so over a
/// disc of radius r the extreme multipliers are attained at μ → 0⁺ (one) and
/// μ = r. Returns (α₋, α₊) valid while every μ stays inside (0, r].
pub fn alpha_bounds(bias: &BiasProfile, radius: f64) -> (f64, f64) {
    let mut lo = 1.0f64;
    let mut hi = 1.0f64;
    for &g in bias.gammas() {
        let at_r = 1.0 / (1.0 + (g - 1.0) * radius);
        lo = lo.min(at_r);
        hi = hi.max(at_r);
    }
    (lo, hi)
}

/// Advance the main state one step together with any number of linearized
/// processes. Each agent draws one uniform u shared by the real declaration
/// ψ = 1{u < f(μᵢ,γᵢ)} and every linearized value 1{u < ζγᵢμᵢ} with
/// ζ = α·h/V(β(t)) (the value ζγᵢμᵢ itself when it exceeds one) — exactly
/// the maximal coupling of the two Bernoulli draws.
pub fn coupled_linearized_step(
    state: &mut SimState,
    net: &Network,
    bias: &BiasProfile,
    functional: &PerronFunctional,
    processes: &mut [LinearizedProcess],
    rng: &mut impl Rng,
) -> Result<(), ConsensusError> {
    if functional.target != ConsensusTarget::Zero {
        return Err(ConsensusError::RegimeMismatch {
            why: "linearized coupling is defined on the ToZero side; map β ↦ 1−β first".into(),
        });
    }
    if !functional.regime_consistent {
        return Err(ConsensusError::RegimeMismatch {
            why: "classify() does not report ToZero for this network/bias".into(),
        });
    }
    for p in processes.iter() {
        if !(p.h > 0.0) {
            return Err(ConsensusError::DomainError {
                what: format!("linearized value h = {} must be positive", p.h),
            });
        }
    }
    let n = state.n();
    let t = state.t() as f64;
    let v_beta = functional.evaluate(state.beta());
    let mu = state.mu().to_vec();
    let us: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    for p in processes.iter_mut() {
        let zeta = p.alpha * p.h / v_beta;
        let mut contribution = 0.0;
        for i in 0..n {
            let rate = zeta * bias.gamma(i) * mu[i];
            let value = if rate <= 1.0 {
                (us[i] < rate) as u64 as f64
            } else {
                rate
            };
            contribution += functional.v[i] * value;
        }
        p.h = t / (t + 1.0) * p.h + contribution / (t + 1.0);
    }
    step_with_uniforms(state, net, bias, &us);
    Ok(())
}

/// Least-squares fit of log s against log t over a checkpoint window.
#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub exponent: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    /// λ − 1 when the caller knows the spectral target.
    pub target: Option<f64>,
}

pub const MIN_FIT_POINTS: usize = 10;

pub fn fit_rate(series: &[(f64, f64)], window: (f64, f64)) -> Result<RateFit, ConsensusError> {
    let points: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(t, _)| t >= window.0 && t <= window.1)
        .collect();
    if points.len() < MIN_FIT_POINTS {
        return Err(ConsensusError::InsufficientData {
            needed: MIN_FIT_POINTS,
            found: points.len(),
        });
    }
    for &(t, value) in &points {
        if !(value > 0.0) {
            return Err(ConsensusError::NonPositiveValue { t, value });
        }
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(t, _)| t.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, s)| s.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let exponent = sxy / sxx;
    let intercept = ybar - exponent * xbar;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (intercept + exponent * x)).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - ybar).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RateFit {
        exponent,
        intercept,
        window,
        r_squared,
        target: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{conformity, init_state, InitialSettings};
    use crate::graph::{build_network, generate};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn classify_uniform_small_gamma_goes_to_zero() {
        for spec in ["complete:5", "cycle:6", "star:4"] {
            let net = generate(spec).unwrap();
            let bias = BiasProfile::uniform(net.n(), 0.5).unwrap();
            let r = classify(&net, &bias, CLASSIFY_TOL).unwrap();
            assert_abs_diff_eq!(r.lambda_zero, 0.5, epsilon = 1e-9);
            assert_abs_diff_eq!(r.lambda_one, 2.0, epsilon = 1e-9);
            assert_eq!(r.regime, Regime::ToZero);
        }
    }

    #[test]
    fn classify_two_cycle_examples() {
        let net = build_network(&[(0, 1, 1.0)]).unwrap();
        let bias = BiasProfile::new(vec![2.0, 2.0]).unwrap();
        let r = classify(&net, &bias, CLASSIFY_TOL).unwrap();
        assert_abs_diff_eq!(r.lambda_zero, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.lambda_one, 0.5, epsilon = 1e-9);
        assert_eq!(r.regime, Regime::ToOne);

        // gamma = (3, 1/3) puts both radii at exactly 1.
        let bias = BiasProfile::new(vec![3.0, 1.0 / 3.0]).unwrap();
        let r = classify(&net, &bias, CLASSIFY_TOL).unwrap();
        assert_abs_diff_eq!(r.lambda_zero, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.lambda_one, 1.0, epsilon = 1e-9);
        assert_eq!(r.regime, Regime::Boundary);
    }

    #[test]
    fn classify_mixed_complete_graph_interior() {
        let net = generate("complete:4").unwrap();
        let bias = BiasProfile::new(vec![2.0, 2.0, 0.5, 0.5]).unwrap();
        let r = classify(&net, &bias, CLASSIFY_TOL).unwrap();
        assert!(r.lambda_zero > 1.0 + CLASSIFY_TOL);
        assert!(r.lambda_one > 1.0 + CLASSIFY_TOL);
        assert_eq!(r.regime, Regime::Interior);
    }

    #[test]
    fn classify_symmetry_under_reciprocal() {
        let net = generate("gnp:8:0.5:3").unwrap();
        let gammas = vec![1.2, 0.5, 0.5, 0.5, 0.8, 0.3, 0.9, 0.4];
        let bias = BiasProfile::new(gammas.clone()).unwrap();
        let flipped = BiasProfile::new(gammas.iter().map(|g| 1.0 / g).collect()).unwrap();
        let a = classify(&net, &bias, CLASSIFY_TOL).unwrap();
        let b = classify(&net, &flipped, CLASSIFY_TOL).unwrap();
        assert_abs_diff_eq!(a.lambda_zero, b.lambda_one, epsilon = 1e-8);
        assert_abs_diff_eq!(a.lambda_one, b.lambda_zero, epsilon = 1e-8);
        match a.regime {
            Regime::ToZero => assert_eq!(b.regime, Regime::ToOne),
            Regime::ToOne => assert_eq!(b.regime, Regime::ToZero),
            other => assert_eq!(b.regime, other),
        }
    }

    fn star_to_zero() -> (Network, BiasProfile) {
        let net = generate("star:5").unwrap();
        let bias = BiasProfile::new(vec![1.2, 0.5, 0.5, 0.5, 0.5]).unwrap();
        (net, bias)
    }

    #[test]
    fn perron_functional_properties() {
        let net = generate("cycle:6").unwrap();
        let bias = BiasProfile::uniform(6, 0.5).unwrap();
        let f = perron_functional(&net, &bias, ConsensusTarget::Zero).unwrap();
        assert!(f.regime_consistent);
        // Uniform gamma on a regular graph: v uniform, V = mean.
        for &vi in &f.v {
            assert_abs_diff_eq!(vi, 1.0 / 6.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(f.evaluate(&[0.0; 6]), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.evaluate(&[1.0; 6]), 1.0, epsilon = 1e-12);

        // Eigen-residual of the left vector.
        let m = scaled_matrix(&net, bias.gammas(), false).unwrap();
        let y = m.transpose_apply(&f.v);
        for (yi, vi) in y.iter().zip(&f.v) {
            assert_abs_diff_eq!(*yi, f.lambda * vi, epsilon = 1e-9);
        }

        let (net, bias) = star_to_zero();
        let f = perron_functional(&net, &bias, ConsensusTarget::Zero).unwrap();
        assert!(f.regime_consistent);
        assert_abs_diff_eq!(f.lambda, 0.6f64.sqrt(), epsilon = 1e-9);
        let g = perron_functional(&net, &bias, ConsensusTarget::One).unwrap();
        assert!(!g.regime_consistent);
        assert_abs_diff_eq!(g.evaluate(&[1.0; 5]), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ratio_r_values_and_sandwich() {
        for t in [1u64, 2, 10, 1000] {
            assert_eq!(ratio_r(t, 1.0).unwrap(), 1.0);
        }
        for eta in [0.1, 0.3, 0.5, 0.7, 0.9] {
            assert_abs_diff_eq!(
                ratio_r(2, eta).unwrap(),
                eta * (1.0 + eta) / 2.0,
                epsilon = 1e-12
            );
            for t in [2u64, 10, 1_000, 1_000_000] {
                let r = ratio_r(t, eta).unwrap();
                let (lo, hi) = ratio_r_bounds(t, eta).unwrap();
                assert!(lo <= r && r <= hi, "t={t} eta={eta}: {lo} {r} {hi}");
            }
        }
        // Direct product check at small t: R(t+1, η) = Π_{τ=0}^{t} (τ+η)/(τ+1).
        let eta = 0.4;
        let mut prod = 1.0;
        for tau in 0..10u64 {
            prod *= (tau as f64 + eta) / (tau as f64 + 1.0);
        }
        assert_relative_eq!(ratio_r(10, eta).unwrap(), prod, max_relative = 1e-12);
        assert!(ratio_r(0, 0.5).is_err());
        assert!(ratio_r(5, 0.0).is_err());
        assert!(ratio_r(5, 1.5).is_err());
    }

    #[test]
    fn coupled_step_identical_rates_coincide() {
        // With zeta chosen so the linearized rate equals f(mu, gamma), the
        // shared uniform makes the two declarations equal surely; running
        // one process at that alpha keeps h equal to V(beta) one step in.
        let (net, bias) = star_to_zero();
        let functional = perron_functional(&net, &bias, ConsensusTarget::Zero).unwrap();
        let init = InitialSettings::uniform(&net, 0.1).unwrap();
        let state = init_state(&net, &init).unwrap();
        // alpha = f/(gamma*mu) is only constant across agents if the ratio
        // agrees; engineer that by scaling a single-step check per agent.
        let mu = state.mu().to_vec();
        let v_beta = functional.evaluate(state.beta());
        // Build a process per agent with alpha matching that agent's ratio;
        // verify the coupled outcome for that agent matches psi.
        for agent in 0..net.n() {
            let ratio = conformity(mu[agent], bias.gamma(agent)) / (bias.gamma(agent) * mu[agent]);
            let mut procs = vec![LinearizedProcess {
                alpha: ratio,
                h: v_beta,
            }];
            let mut probe = state.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            coupled_linearized_step(&mut probe, &net, &bias, &functional, &mut procs, &mut rng)
                .unwrap();
            let psi = probe.history(agent)[0].1;
            // Reconstruct the linearized draw for this agent from the same stream.
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let us: Vec<f64> = (0..net.n()).map(|_| rng.gen::<f64>()).collect();
            let zeta = ratio * v_beta / v_beta;
            let rate = zeta * bias.gamma(agent) * mu[agent];
            assert!(rate <= 1.0);
            assert_eq!(us[agent] < rate, psi, "agent {agent}");
        }
    }

    #[test]
    fn coupled_mean_matches_linear_rate() {
        let (net, bias) = star_to_zero();
        let functional = perron_functional(&net, &bias, ConsensusTarget::Zero).unwrap();
        let init = InitialSettings::uniform(&net, 0.1).unwrap();
        let state0 = init_state(&net, &init).unwrap();
        let v0 = functional.evaluate(state0.beta());
        let alpha = 0.97;
        let reps = 100_000u64;
        let mut sum = 0.0;
        for seed in 0..reps {
            let mut state = state0.clone();
            let mut procs = vec![LinearizedProcess { alpha, h: v0 }];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            coupled_linearized_step(&mut state, &net, &bias, &functional, &mut procs, &mut rng)
                .unwrap();
            sum += procs[0].h;
        }
        // E[h(2)] = (1/2)h(1) + (1/2)·alpha·lambda·V(beta(1))
        let expected = 0.5 * v0 + 0.5 * alpha * functional.lambda * v0;
        let mean = sum / reps as f64;
        assert!(
            (mean - expected).abs() < 5e-4,
            "mean {mean} expected {expected}"
        );
    }

    #[test]
    fn coupled_requires_to_zero() {
        let net = generate("complete:4").unwrap();
        let bias = BiasProfile::new(vec![2.0, 2.0, 0.5, 0.5]).unwrap();
        let functional = PerronFunctional {
            target: ConsensusTarget::Zero,
            lambda: 1.2,
            v: vec![0.25; 4],
            regime_consistent: false,
        };
        let init = InitialSettings::uniform(&net, 0.5).unwrap();
        let mut state = init_state(&net, &init).unwrap();
        let mut procs = vec![LinearizedProcess { alpha: 1.0, h: 0.5 }];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            coupled_linearized_step(&mut state, &net, &bias, &functional, &mut procs, &mut rng),
            Err(ConsensusError::RegimeMismatch { .. })
        ));
    }

    #[test]
    fn alpha_bounds_bracket_the_ratio() {
        let (_, bias) = star_to_zero();
        let r = 0.35;
        let (lo, hi) = alpha_bounds(&bias, r);
        assert!(lo < 1.0 && hi > 1.0);
        for &g in bias.gammas() {
            for k in 1..=100 {
                let mu = r * k as f64 / 100.0;
                let ratio = conformity(mu, g) / (g * mu);
                assert!(lo <= ratio + 1e-12 && ratio <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn fit_rate_exact_power_laws() {
        let series: Vec<(f64, f64)> = (1..=60)
            .map(|k| {
                let t = 2.0_f64 * 1.2f64.powi(k);
                (t, t.powf(-0.4))
            })
            .collect();
        let fit = fit_rate(&series, (2.0, 1e9)).unwrap();
        assert_abs_diff_eq!(fit.exponent, -0.4, epsilon = 1e-9);
        assert!(fit.r_squared > 1.0 - 1e-12);

        let series: Vec<(f64, f64)> = (1..=60)
            .map(|k| {
                let t = 2.0_f64 * 1.2f64.powi(k);
                (t, 3.0 * t.powf(-0.25))
            })
            .collect();
        let fit = fit_rate(&series, (2.0, 1e9)).unwrap();
        assert_abs_diff_eq!(fit.exponent, -0.25, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.intercept, 3.0f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn fit_rate_errors() {
        let few: Vec<(f64, f64)> = (1..=5).map(|k| (k as f64, 1.0)).collect();
        assert!(matches!(
            fit_rate(&few, (0.0, 10.0)),
            Err(ConsensusError::InsufficientData { found: 5, .. })
        ));
        let bad: Vec<(f64, f64)> = (1..=12).map(|k| (k as f64, 1.0 - 0.1 * k as f64)).collect();
        assert!(matches!(
            fit_rate(&bad, (0.0, 20.0)),
            Err(ConsensusError::NonPositiveValue { .. })
        ));
    }
}
