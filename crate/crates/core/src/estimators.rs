//! The three estimators built on a declaration history — the MLE for the
//! bias parameter, the sign-based inherent-belief estimator, and the
//! equilibrium-ratio estimator — plus closed-form convergence-time
//! predictors for the belief estimator.

use serde::Serialize;
use thiserror::Error;

use crate::dynamics::SimState;
use crate::likelihood::{nll_gradient, nll_hessian, DeclarationHistory};

/// Sentinel |χ| for unidentifiable (one-sided) histories: the true minimizer
/// sits at ±∞, the clamp keeps downstream code total.
pub const CHI_CLAMP: f64 = 40.0;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("history is empty")]
    EmptyHistory,
    #[error("estimator needs t >= 2, state is at t = {t}")]
    TooEarly { t: u64 },
    #[error("domain error: {what}")]
    DomainError { what: String },
    #[error("invalid regime parameters: {what}")]
    InvalidRegimeParams { what: String },
}

/// MLE output for one agent's bias parameter.
#[derive(Debug, Clone, Serialize)]
pub struct BiasEstimate {
    pub chi_hat: f64,
    pub gamma_hat: f64,
    /// 1 ⟺ χ̂ > 0.
    pub phi_hat: bool,
    pub iterations: usize,
    /// False when the history contains only one opinion.
    pub identifiable: bool,
}

/// Minimize the total loss over χ: safeguarded Newton (bisection fallback on
/// the sign-changing gradient bracket). `tol` bounds |gradient| at the root.
pub fn mle_bias(h: &DeclarationHistory, tol: f64) -> Result<BiasEstimate, EstimatorError> {
    mle_bias_from(h, tol, 0.0)
}

/// `mle_bias` with a caller-chosen starting point (used for warm starts when
/// re-estimating along a growing history).
pub fn mle_bias_from(
    h: &DeclarationHistory,
    tol: f64,
    start: f64,
) -> Result<BiasEstimate, EstimatorError> {
    if h.is_empty() {
        return Err(EstimatorError::EmptyHistory);
    }
    if h.one_sided() {
        let chi_hat = if h.count_zeros() == 0 {
            CHI_CLAMP
        } else {
            -CHI_CLAMP
        };
        return Ok(BiasEstimate {
            chi_hat,
            gamma_hat: chi_hat.exp(),
            phi_hat: chi_hat > 0.0,
            iterations: 0,
            identifiable: false,
        });
    }

    // With both opinions present the gradient goes to −count_ones at −∞ and
    // +count_zeros at +∞; expand the bracket until the signs confirm it.
    let mut lo = -CHI_CLAMP;
    let mut hi = CHI_CLAMP;
    while nll_gradient(h, lo) >= 0.0 && lo > -700.0 {
        lo *= 2.0;
    }
    while nll_gradient(h, hi) <= 0.0 && hi < 700.0 {
        hi *= 2.0;
    }

    let mut x = start.clamp(lo, hi);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let g = nll_gradient(h, x);
        if g.abs() <= tol || (hi - lo) <= 1e-14 * x.abs().max(1.0) || iterations > 200 {
            return Ok(BiasEstimate {
                chi_hat: x,
                gamma_hat: x.exp(),
                phi_hat: x > 0.0,
                iterations,
                identifiable: true,
            });
        }
        if g > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let hess = nll_hessian(h, x).expect("nonempty history");
        let newton = x - g / hess;
        x = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
}

/// Three-valued belief call; ties are reported, not forced to a side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Belief {
    Zero,
    One,
    Tie,
}

impl Belief {
    pub fn from_sign(statistic: f64) -> Belief {
        if statistic > 0.0 {
            Belief::One
        } else if statistic < 0.0 {
            Belief::Zero
        } else {
            Belief::Tie
        }
    }

    /// ½·sign(·) + ½ with the tie mapped to ½.
    pub fn as_f64(self) -> f64 {
        match self {
            Belief::Zero => 0.0,
            Belief::One => 1.0,
            Belief::Tie => 0.5,
        }
    }

    /// Does the call match the true belief? Ties never match.
    pub fn matches(self, phi: bool) -> bool {
        matches!(
            (self, phi),
            (Belief::One, true) | (Belief::Zero, false)
        )
    }

    pub fn is_tie(self) -> bool {
        self == Belief::Tie
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BeliefEstimate {
    /// (t−1)·β̄ᵢ(t) − Σ_{τ=1..t−1} μᵢ(τ).
    pub statistic: f64,
    pub phi_hat: Belief,
}

/// Belief call from the two running sufficient statistics alone: the
/// declaration count Sᵢ = (t−1)β̄ᵢ and the accumulated pressure Σμᵢ.
pub fn belief_from_counts(ones: u64, mu_cumsum: f64) -> BeliefEstimate {
    let statistic = ones as f64 - mu_cumsum;
    BeliefEstimate {
        statistic,
        phi_hat: Belief::from_sign(statistic),
    }
}

/// Inherent-belief estimator: compare the agent's own declaration count with
/// the accumulated neighborhood pressure. Needs only the two running
/// sufficient statistics.
pub fn inherent_belief(state: &SimState, agent: usize) -> Result<BeliefEstimate, EstimatorError> {
    if state.t() < 2 {
        return Err(EstimatorError::TooEarly { t: state.t() });
    }
    Ok(belief_from_counts(
        state.ones()[agent],
        state.mu_cumsum()[agent],
    ))
}

/// Guard half-width around {0, 1} outside which the equilibrium estimator is
/// declared out of domain (the consensus regime, where it degenerates).
pub const EQ_BOUNDARY_GUARD: f64 = 1e-12;

/// Equilibrium-ratio estimator γ̂ = [β/(1−β)]·[(1−μ)/μ]; exact inverse of
/// β = f(μ, γ) at a fixed point.
pub fn equilibrium_bias_estimate(beta: f64, mu: f64) -> Result<f64, EstimatorError> {
    for (name, v) in [("beta", beta), ("mu", mu)] {
        if !(v > EQ_BOUNDARY_GUARD && v < 1.0 - EQ_BOUNDARY_GUARD) {
            return Err(EstimatorError::DomainError {
                what: format!("{name} = {v} too close to the boundary; equilibrium estimator undefined"),
            });
        }
    }
    Ok((beta / (1.0 - beta)) * ((1.0 - mu) / mu))
}

/// Sign companion of the equilibrium estimator: 1 ⟺ β > μ, consistent with
/// γ̂ > 1 ⟺ β > μ.
pub fn equilibrium_belief_estimate(beta: f64, mu: f64) -> Belief {
    if beta > mu {
        Belief::One
    } else if beta < mu {
        Belief::Zero
    } else {
        Belief::Tie
    }
}

/// Growth-law regime for the belief-estimator drift X(t) > g(t).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RegimeParams {
    /// g(t) = (γ−1)/(4γ)·κ·log t — only the universal μ-band assumed.
    WorstCase,
    /// g(t) = K·t — pressure bounded away from the boundary.
    Interior { k: f64 },
    /// g(t) = c₁·t^{λ−ε} — consensus with spectral radius λ.
    Consensus { c1: f64, lambda: f64, epsilon: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct RatePrediction {
    pub regime: RegimeParams,
    /// ξ = 1/(4c + 2/3) with c = γ/(γ−1) (after the γ ↔ 1/γ reduction).
    pub xi: f64,
    /// Time by which the estimator has converged with probability ≥ 1−δ.
    pub t_star: f64,
    /// log(t_star); finite even when t_star overflows f64.
    pub log_t_star: f64,
    /// Feasibility threshold t₀ with X(t₀) > 2.
    pub t_feasible: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub delta: f64,
}

/// Invert the drift condition: t* = g⁻¹((1/ξ)·log(1/(δ(e^ξ − 1)))) for the
/// regime's g. Biases below one reduce to their reciprocal by the 0 ↔ 1
/// symmetry of the model.
pub fn predict_convergence_time(
    gamma_i: f64,
    kappa: f64,
    delta: f64,
    regime: RegimeParams,
) -> Result<RatePrediction, EstimatorError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(EstimatorError::InvalidRegimeParams {
            what: format!("delta = {delta} outside (0,1)"),
        });
    }
    if !(gamma_i > 0.0) || (gamma_i - 1.0).abs() < crate::dynamics::MIN_GAMMA_GAP {
        return Err(EstimatorError::InvalidRegimeParams {
            what: format!("gamma = {gamma_i} must be positive and not 1"),
        });
    }
    if !(kappa > 0.0) {
        return Err(EstimatorError::InvalidRegimeParams {
            what: format!("kappa = {kappa} must be positive"),
        });
    }
    let gamma = if gamma_i > 1.0 { gamma_i } else { 1.0 / gamma_i };
    let c = gamma / (gamma - 1.0);
    let xi = 1.0 / (4.0 * c + 2.0 / 3.0);
    let threshold = (1.0 / (delta * (xi.exp() - 1.0))).ln() / xi;
    let (log_t_star, t_feasible) = match regime {
        RegimeParams::WorstCase => {
            let slope = (gamma - 1.0) / (4.0 * gamma) * kappa;
            (threshold / slope, (2.0 / slope).exp())
        }
        RegimeParams::Interior { k } => {
            if !(k > 0.0) {
                return Err(EstimatorError::InvalidRegimeParams {
                    what: format!("interior drift constant K = {k} must be positive"),
                });
            }
            ((threshold / k).ln(), 2.0 / k)
        }
        RegimeParams::Consensus {
            c1,
            lambda,
            epsilon,
        } => {
            if !(c1 > 0.0) || !(lambda > 0.0 && lambda <= 1.0) || !(epsilon > 0.0 && epsilon < lambda)
            {
                return Err(EstimatorError::InvalidRegimeParams {
                    what: format!(
                        "consensus regime needs c1 > 0, lambda in (0,1], 0 < epsilon < lambda; got c1={c1} lambda={lambda} epsilon={epsilon}"
                    ),
                });
            }
            let exponent = 1.0 / (lambda - epsilon);
            (
                exponent * (threshold / c1).ln(),
                (2.0 / c1).powf(exponent),
            )
        }
    };
    Ok(RatePrediction {
        regime,
        xi,
        t_star: log_t_star.exp(),
        log_t_star,
        t_feasible,
        gamma: gamma_i,
        kappa,
        delta,
    })
}
