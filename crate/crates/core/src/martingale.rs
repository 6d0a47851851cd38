//! Likelihood-ratio diagnostics for a hypothesis pair (γ₁, γ₂): the loss
//! difference Z, its predictable drift X, the martingale part Y = X − Z, the
//! predictable quadratic variation W, the per-step bounds tying them
//! together, and Freedman's tail bound.

use thiserror::Error;

use crate::dynamics::conformity_probability;
use crate::likelihood::{
    hellinger_x_lower_bound, kl_bernoulli, single_step_nll, DeclarationHistory,
};

/// Relative gap below which two hypotheses are considered identical.
const MIN_RELATIVE_GAP: f64 = 1e-9;

/// Slack used by the hard-bound verifiers to absorb floating-point rounding.
const CHECK_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MartingaleError {
    #[error("hypotheses coincide: gamma1 = {gamma1}, gamma2 = {gamma2}")]
    EqualHypotheses { gamma1: f64, gamma2: f64 },
    #[error("time {t} outside the trace range [2, {t_max}]")]
    OutOfRange { t: u64, t_max: u64 },
    #[error("domain error: {what}")]
    DomainError { what: String },
}

/// Aligned per-step and cumulative processes over τ = 2..t; index k holds
/// time τ = k + 2.
#[derive(Debug, Clone)]
pub struct MartingaleTrace {
    pub gamma1: f64,
    pub gamma2: f64,
    /// Step-size bound α = |log(γ₁/γ₂)|.
    pub alpha_step: f64,
    /// Drift-floor constant: x ≥ c₀·κ/t.
    pub c0: f64,
    /// Variance-to-drift constant: w ≤ c₁·x.
    pub c1: f64,
    pub z_step: Vec<f64>,
    pub x_step: Vec<f64>,
    pub y_step: Vec<f64>,
    pub w_step: Vec<f64>,
    pub z_cum: Vec<f64>,
    pub x_cum: Vec<f64>,
    pub y_cum: Vec<f64>,
    pub w_cum: Vec<f64>,
    /// Hellinger floor per step, for the pointwise x check.
    pub x_floor: Vec<f64>,
    mu: Vec<f64>,
}

impl MartingaleTrace {
    pub fn len(&self) -> usize {
        self.z_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_step.is_empty()
    }

    pub fn t_max(&self) -> u64 {
        self.len() as u64 + 1
    }

    fn index_of(&self, t: u64) -> Result<usize, MartingaleError> {
        if t < 2 || t > self.t_max() {
            return Err(MartingaleError::OutOfRange {
                t,
                t_max: self.t_max(),
            });
        }
        Ok((t - 2) as usize)
    }

    pub fn z_at(&self, t: u64) -> Result<f64, MartingaleError> {
        Ok(self.z_cum[self.index_of(t)?])
    }

    pub fn x_at(&self, t: u64) -> Result<f64, MartingaleError> {
        Ok(self.x_cum[self.index_of(t)?])
    }

    pub fn mu_before(&self, t: u64) -> Result<f64, MartingaleError> {
        Ok(self.mu[self.index_of(t)?])
    }
}

/// Compute the decomposition from a history generated under γ₁. Z comes from
/// realized losses, X and W from the closed forms, Y = X − Z.
pub fn build_trace(
    h: &DeclarationHistory,
    gamma1: f64,
    gamma2: f64,
) -> Result<MartingaleTrace, MartingaleError> {
    if !(gamma1 > 0.0 && gamma2 > 0.0) {
        return Err(MartingaleError::DomainError {
            what: format!("hypotheses must be positive, got ({gamma1}, {gamma2})"),
        });
    }
    if (gamma1 - gamma2).abs() <= MIN_RELATIVE_GAP * gamma1.max(gamma2) {
        return Err(MartingaleError::EqualHypotheses { gamma1, gamma2 });
    }
    let chi1 = gamma1.ln();
    let chi2 = gamma2.ln();
    let log_ratio = chi1 - chi2;
    let n = h.len();
    let mut tr = MartingaleTrace {
        gamma1,
        gamma2,
        alpha_step: log_ratio.abs(),
        c0: 0.5 * (gamma1.sqrt() - gamma2.sqrt()).powi(2)
            / (0.5 * (gamma1 + gamma2)).max(1.0).powi(2),
        c1: gamma1 * log_ratio * log_ratio / gamma1.min(1.0).powi(2)
            * (0.5 * (gamma1 + gamma2)).max(1.0).powi(2)
            / (gamma1.sqrt() - gamma2.sqrt()).powi(2),
        z_step: Vec::with_capacity(n),
        x_step: Vec::with_capacity(n),
        y_step: Vec::with_capacity(n),
        w_step: Vec::with_capacity(n),
        z_cum: Vec::with_capacity(n),
        x_cum: Vec::with_capacity(n),
        y_cum: Vec::with_capacity(n),
        w_cum: Vec::with_capacity(n),
        x_floor: Vec::with_capacity(n),
        mu: h.mu().to_vec(),
    };
    let (mut zc, mut xc, mut wc) = (0.0, 0.0, 0.0);
    for ((&mu, &nu), &pt) in h.mu().iter().zip(h.nu()).zip(h.psi_tilde()) {
        // z = loss under gamma2 minus loss under gamma1 for the realized psi.
        let z = single_step_nll(chi2, nu, pt) - single_step_nll(chi1, nu, pt);
        let p1 = conformity_probability(mu, gamma1).expect("interior mu");
        let p2 = conformity_probability(mu, gamma2).expect("interior mu");
        let x = kl_bernoulli(p1, p2).expect("interior probabilities");
        let denom = 1.0 + (gamma1 - 1.0) * mu;
        let w = gamma1 * mu * (1.0 - mu) / (denom * denom) * log_ratio * log_ratio;
        let y = x - z;
        zc += z;
        xc += x;
        wc += w;
        tr.z_step.push(z);
        tr.x_step.push(x);
        tr.y_step.push(y);
        tr.w_step.push(w);
        tr.z_cum.push(zc);
        tr.x_cum.push(xc);
        tr.y_cum.push(xc - zc);
        tr.w_cum.push(wc);
        tr.x_floor
            .push(hellinger_x_lower_bound(mu, gamma1, gamma2).expect("interior mu"));
    }
    Ok(tr)
}

/// Which hypothesis the sign test Z(t) > 0 selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    Gamma1,
    Gamma2,
}

#[derive(Debug, Clone, Copy)]
pub struct Decision {
    pub pick: Hypothesis,
    pub tie: bool,
}

pub fn decision(trace: &MartingaleTrace, t: u64) -> Result<Decision, MartingaleError> {
    let z = trace.z_at(t)?;
    Ok(if z > 0.0 {
        Decision {
            pick: Hypothesis::Gamma1,
            tie: false,
        }
    } else if z < 0.0 {
        Decision {
            pick: Hypothesis::Gamma2,
            tie: false,
        }
    } else {
        Decision {
            pick: Hypothesis::Gamma1,
            tie: true,
        }
    })
}

/// Freedman tail bound exp(−(s²/2)/(σ² + αs/3)) for a martingale with step
/// bound α and predictable variation ≤ σ².
pub fn freedman_bound(s: f64, sigma_sq: f64, alpha: f64) -> Result<f64, MartingaleError> {
    if !(s > 0.0) || !(sigma_sq >= 0.0) || !(alpha > 0.0) {
        return Err(MartingaleError::DomainError {
            what: format!("freedman_bound needs s > 0, sigma_sq >= 0, alpha > 0; got ({s}, {sigma_sq}, {alpha})"),
        });
    }
    Ok((-(s * s / 2.0) / (sigma_sq + alpha * s / 3.0)).exp())
}

/// Verification of the assertion-level per-step inequalities.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct HardBoundReport {
    pub steps_checked: usize,
    /// |ΔZ| ≤ α or |ΔY| ≤ α failures.
    pub step_bound_violations: usize,
    /// w ≤ c₁·x failures.
    pub variance_violations: usize,
    /// x ≥ Hellinger floor failures.
    pub hellinger_violations: usize,
    /// X or W decreasing failures.
    pub monotonicity_violations: usize,
}

impl HardBoundReport {
    pub fn total(&self) -> usize {
        self.step_bound_violations
            + self.variance_violations
            + self.hellinger_violations
            + self.monotonicity_violations
    }

    pub fn merge(&mut self, other: &HardBoundReport) {
        self.steps_checked += other.steps_checked;
        self.step_bound_violations += other.step_bound_violations;
        self.variance_violations += other.variance_violations;
        self.hellinger_violations += other.hellinger_violations;
        self.monotonicity_violations += other.monotonicity_violations;
    }
}

pub fn verify_hard_bounds(trace: &MartingaleTrace) -> HardBoundReport {
    let mut report = HardBoundReport {
        steps_checked: trace.len(),
        ..Default::default()
    };
    let alpha = trace.alpha_step;
    for k in 0..trace.len() {
        if trace.z_step[k].abs() > alpha + CHECK_SLACK || trace.y_step[k].abs() > alpha + CHECK_SLACK
        {
            report.step_bound_violations += 1;
        }
        if trace.w_step[k] > trace.c1 * trace.x_step[k] * (1.0 + CHECK_SLACK) + CHECK_SLACK {
            report.variance_violations += 1;
        }
        if trace.x_step[k] < trace.x_floor[k] * (1.0 - CHECK_SLACK) - CHECK_SLACK {
            report.hellinger_violations += 1;
        }
        if k > 0
            && (trace.x_cum[k] < trace.x_cum[k - 1] || trace.w_cum[k] < trace.w_cum[k - 1])
        {
            report.monotonicity_violations += 1;
        }
    }
    report
}

/// Drift-floor verdict for a trace carrying the run constant κ.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DriftFloorReport {
    pub steps_checked: usize,
    /// x(τ) ≥ ½·c₀·κ/τ failures.
    pub pointwise_violations: usize,
    /// min over the last decade of X(t)/log t.
    pub tail_constant: f64,
    /// X(T) > X(T/2) + 0.9·(floor increment over (T/2, T]).
    pub growth_ok: bool,
}

pub fn drift_floor_check(trace: &MartingaleTrace, kappa: f64) -> DriftFloorReport {
    let n = trace.len();
    let t_max = trace.t_max();
    let mut pointwise_violations = 0;
    for k in 0..n {
        let tau = (k + 2) as f64;
        let floor = 0.5 * trace.c0 * kappa / tau;
        if trace.x_step[k] < floor * (1.0 - CHECK_SLACK) - CHECK_SLACK {
            pointwise_violations += 1;
        }
    }
    let decade_start = (t_max / 10).max(2);
    let mut tail_constant = f64::INFINITY;
    for k in 0..n {
        let tau = (k + 2) as u64;
        if tau >= decade_start {
            tail_constant = tail_constant.min(trace.x_cum[k] / (tau as f64).ln());
        }
    }
    let half = (t_max / 2).max(2);
    let x_half = trace.x_cum[(half - 2) as usize];
    let x_full = trace.x_cum[n - 1];
    let floor_increment: f64 = ((half + 1)..=t_max)
        .map(|tau| 0.5 * trace.c0 * kappa / tau as f64)
        .sum();
    let growth_ok = x_full > x_half + 0.9 * floor_increment;
    DriftFloorReport {
        steps_checked: n,
        pointwise_violations,
        tail_constant,
        growth_ok,
    }
}
