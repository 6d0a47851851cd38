//! Negative log-likelihood of a declaration history as a function of the
//! bias parameter, worked in the convex reparameterization χ = log γ, plus
//! the KL/Hellinger quantities the martingale diagnostics build on.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LikelihoodError {
    #[error("domain error: {what}")]
    DomainError { what: String },
    #[error("history is empty")]
    EmptyHistory,
}

/// log(μ/(1−μ)).
pub fn logit(mu: f64) -> Result<f64, LikelihoodError> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(LikelihoodError::DomainError {
            what: format!("logit argument {mu} outside (0,1)"),
        });
    }
    Ok((mu / (1.0 - mu)).ln())
}

/// Standard logistic function, stable for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + eˣ) = max(x, 0) + log1p(e^{−|x|}), stable over the whole line.
#[inline]
pub fn log1pexp(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// One agent's declaration record in the (ν, ψ̃) parameterization:
/// ν_τ = logit(μ(τ−1)) and ψ̃ = 2ψ − 1 for τ = 2..t.
#[derive(Debug, Clone, Default)]
pub struct DeclarationHistory {
    mu: Vec<f64>,
    nu: Vec<f64>,
    psi_tilde: Vec<i8>,
    count_ones: usize,
    count_zeros: usize,
    mu_sum: f64,
}

impl DeclarationHistory {
    /// Build from the simulator's (μ(τ−1), ψ_τ) pairs.
    pub fn from_pairs(pairs: &[(f64, bool)]) -> Result<Self, LikelihoodError> {
        let mut h = DeclarationHistory::default();
        for &(mu, psi) in pairs {
            h.push(mu, psi)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, mu: f64, psi: bool) -> Result<(), LikelihoodError> {
        let nu = logit(mu)?;
        self.mu.push(mu);
        self.nu.push(nu);
        self.psi_tilde.push(if psi { 1 } else { -1 });
        if psi {
            self.count_ones += 1;
        } else {
            self.count_zeros += 1;
        }
        self.mu_sum += mu;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu.is_empty()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn psi_tilde(&self) -> &[i8] {
        &self.psi_tilde
    }

    pub fn count_ones(&self) -> usize {
        self.count_ones
    }

    pub fn count_zeros(&self) -> usize {
        self.count_zeros
    }

    /// Σ_{τ=1..t−1} μ(τ).
    pub fn mu_sum(&self) -> f64 {
        self.mu_sum
    }

    pub fn one_sided(&self) -> bool {
        self.count_ones == 0 || self.count_zeros == 0
    }
}

/// ℓ = log(1 + e^{−ψ̃(χ+ν)}), the per-step loss.
#[inline]
pub fn single_step_nll(chi: f64, nu: f64, psi_tilde: i8) -> f64 {
    log1pexp(-(psi_tilde as f64) * (chi + nu))
}

/// L(χ, t) = Σ_τ ℓ(χ, τ).
pub fn total_nll(h: &DeclarationHistory, chi: f64) -> f64 {
    h.nu
        .iter()
        .zip(&h.psi_tilde)
        .map(|(&nu, &pt)| single_step_nll(chi, nu, pt))
        .sum()
}

/// dL/dχ = Σ_τ [σ(χ+ν_τ) − 1{ψ̃_τ = +1}]; at χ = 0 this equals
/// Σμ − (t−1)β̄ exactly (the inherent-belief statistic with flipped sign).
pub fn nll_gradient(h: &DeclarationHistory, chi: f64) -> f64 {
    h.nu
        .iter()
        .zip(&h.psi_tilde)
        .map(|(&nu, &pt)| sigmoid(chi + nu) - if pt > 0 { 1.0 } else { 0.0 })
        .sum()
}

/// d²L/dχ² = Σ_τ σ(χ+ν_τ)(1 − σ(χ+ν_τ)) > 0: the loss is strictly convex.
pub fn nll_hessian(h: &DeclarationHistory, chi: f64) -> Result<f64, LikelihoodError> {
    if h.is_empty() {
        return Err(LikelihoodError::EmptyHistory);
    }
    Ok(h.nu
        .iter()
        .map(|&nu| {
            let s = sigmoid(chi + nu);
            s * (1.0 - s)
        })
        .sum())
}

/// KL divergence between Bernoulli(p) and Bernoulli(q), interior arguments
/// only: a boundary value here signals an upstream bug, not a limit.
pub fn kl_bernoulli(p: f64, q: f64) -> Result<f64, LikelihoodError> {
    if !(p > 0.0 && p < 1.0 && q > 0.0 && q < 1.0) {
        return Err(LikelihoodError::DomainError {
            what: format!("kl arguments ({p}, {q}) must be interior"),
        });
    }
    Ok(p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln())
}

/// Closed-form lower bound on the per-step drift
/// x = KL(f(μ,γ₁) ‖ f(μ,γ₂)) ≥ (√γ₁−√γ₂)² μ(1−μ) / max{(γ₁+γ₂)/2, 1}².
pub fn hellinger_x_lower_bound(mu: f64, gamma1: f64, gamma2: f64) -> Result<f64, LikelihoodError> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(LikelihoodError::DomainError {
            what: format!("mu = {mu} outside (0,1)"),
        });
    }
    if !(gamma1 > 0.0 && gamma2 > 0.0) {
        return Err(LikelihoodError::DomainError {
            what: format!("gammas ({gamma1}, {gamma2}) must be positive"),
        });
    }
    let num = (gamma1.sqrt() - gamma2.sqrt()).powi(2) * mu * (1.0 - mu);
    let den = (0.5 * (gamma1 + gamma2)).max(1.0).powi(2);
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::conformity_probability;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_history(seed: u64, len: usize) -> DeclarationHistory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = DeclarationHistory::default();
        for _ in 0..len {
            let mu = 0.02 + 0.96 * rng.gen::<f64>();
            h.push(mu, rng.gen::<f64>() < mu).unwrap();
        }
        h
    }

    #[test]
    fn logit_examples() {
        assert_eq!(logit(0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(logit(0.25).unwrap(), -1.0986122886681098, epsilon = 1e-12);
        for k in 1..50 {
            let mu = k as f64 / 50.0;
            assert_abs_diff_eq!(logit(1.0 - mu).unwrap(), -logit(mu).unwrap(), epsilon = 1e-12);
            assert_abs_diff_eq!(sigmoid(logit(mu).unwrap()), mu, epsilon = 1e-14);
        }
        assert!(logit(0.0).is_err());
        assert!(logit(1.0).is_err());
    }

    #[test]
    fn sigmoid_equals_conformity_in_logit_coords() {
        for &(mu, g) in &[(0.3, 2.0), (0.9, 0.1), (0.05, 7.0)] {
            let f = conformity_probability(mu, g).unwrap();
            assert_abs_diff_eq!(sigmoid(g.ln() + logit(mu).unwrap()), f, epsilon = 1e-14);
        }
    }

    #[test]
    fn single_step_values() {
        let ln2 = std::f64::consts::LN_2;
        assert_abs_diff_eq!(single_step_nll(0.0, 0.0, 1), ln2, epsilon = 1e-15);
        assert_abs_diff_eq!(single_step_nll(0.0, 0.0, -1), ln2, epsilon = 1e-15);
        assert_abs_diff_eq!(
            single_step_nll(3.0f64.ln(), -(3.0f64.ln()), 1),
            ln2,
            epsilon = 1e-15
        );
        // Far tail: ≈ e⁻⁵⁰, neither flushed to zero nor overflowed.
        let v = single_step_nll(0.0, 50.0, 1);
        assert!(v > 0.0 && (v - (-50.0f64).exp()).abs() < 1e-30);
        assert!(single_step_nll(0.0, 700.0, -1).is_finite());
    }

    #[test]
    fn total_nll_composes() {
        let mut h = DeclarationHistory::default();
        assert_eq!(total_nll(&h, 1.3), 0.0);
        h.push(0.5, true).unwrap();
        assert_abs_diff_eq!(total_nll(&h, 0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        h.push(0.3, false).unwrap();
        h.push(0.8, true).unwrap();
        let by_hand: f64 = [(0.5, 1i8), (0.3, -1), (0.8, 1)]
            .iter()
            .map(|&(mu, pt)| single_step_nll(0.7, logit(mu).unwrap(), pt))
            .sum();
        assert_abs_diff_eq!(total_nll(&h, 0.7), by_hand, epsilon = 1e-14);
        // Increasing in t for fixed chi.
        assert!(total_nll(&h, 0.7) > single_step_nll(0.7, 0.0, 1) - 1e-12);
    }

    #[test]
    fn gradient_examples() {
        let h = DeclarationHistory::from_pairs(&[(0.5, true)]).unwrap();
        assert_abs_diff_eq!(nll_gradient(&h, 0.0), -0.5, epsilon = 1e-15);
        for seed in 0..50 {
            let h = random_history(seed, 200);
            let expect = h.mu_sum() - h.count_ones() as f64;
            assert_abs_diff_eq!(nll_gradient(&h, 0.0), expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..1000 {
            let h = random_history(seed, 1 + (seed as usize % 120));
            let chi = -8.0 + 16.0 * rng.gen::<f64>();
            let eps = 1e-6;
            let fd_grad = (total_nll(&h, chi + eps) - total_nll(&h, chi - eps)) / (2.0 * eps);
            let g = nll_gradient(&h, chi);
            assert_relative_eq!(g, fd_grad, max_relative = 1e-6, epsilon = 1e-6);
            let fd_hess = (nll_gradient(&h, chi + eps) - nll_gradient(&h, chi - eps)) / (2.0 * eps);
            let hh = nll_hessian(&h, chi).unwrap();
            assert!(hh > 0.0);
            assert_relative_eq!(hh, fd_hess, max_relative = 1e-5, epsilon = 1e-5);
        }
    }

    #[test]
    fn hessian_positive_wide_chi() {
        for seed in 0..20 {
            let h = random_history(seed, 50);
            for k in 0..41 {
                let chi = -20.0 + k as f64;
                assert!(nll_hessian(&h, chi).unwrap() > 0.0);
            }
        }
        assert!(matches!(
            nll_hessian(&DeclarationHistory::default(), 0.0),
            Err(LikelihoodError::EmptyHistory)
        ));
    }

    #[test]
    fn convex_midpoint_and_monotone_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for seed in 0..200 {
            let h = random_history(seed, 80);
            let a = -6.0 + 12.0 * rng.gen::<f64>();
            let b = -6.0 + 12.0 * rng.gen::<f64>();
            let (lo, hi) = (a.min(b), a.max(b));
            let mid = total_nll(&h, 0.5 * (lo + hi));
            let avg = 0.5 * (total_nll(&h, lo) + total_nll(&h, hi));
            assert!(mid <= avg + 1e-12, "seed {seed}");
        }
        // All ψ̃ = +1 → decreasing in χ; all ψ̃ = −1 → increasing.
        let ones = DeclarationHistory::from_pairs(&[(0.4, true), (0.6, true)]).unwrap();
        let zeros = DeclarationHistory::from_pairs(&[(0.4, false), (0.6, false)]).unwrap();
        let mut prev_one = f64::INFINITY;
        let mut prev_zero = f64::NEG_INFINITY;
        for k in -10..=10 {
            let chi = k as f64 * 0.5;
            let v1 = total_nll(&ones, chi);
            let v0 = total_nll(&zeros, chi);
            assert!(v1 < prev_one);
            assert!(v0 > prev_zero);
            prev_one = v1;
            prev_zero = v0;
        }
    }

    #[test]
    fn score_is_centered_at_truth() {
        // Mean per-step gradient at the true χ over many single-step draws.
        let mu = 0.35;
        let gamma: f64 = 2.5;
        let chi = gamma.ln();
        let p = conformity_probability(mu, gamma).unwrap();
        let n = 100_000u64;
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let psi = rng.gen::<f64>() < p;
            let h = DeclarationHistory::from_pairs(&[(mu, psi)]).unwrap();
            let g = nll_gradient(&h, chi);
            sum += g;
            sumsq += g * g;
        }
        let mean = sum / n as f64;
        let sd = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(mean.abs() <= 3.0 * sd, "mean {mean} sd {sd}");
    }

    #[test]
    fn kl_values_and_hellinger_bound() {
        assert_eq!(kl_bernoulli(0.37, 0.37).unwrap(), 0.0);
        assert_abs_diff_eq!(
            kl_bernoulli(0.75, 0.5).unwrap(),
            0.13081203594113696,
            epsilon = 1e-14
        );
        assert!(kl_bernoulli(0.0, 0.5).is_err());
        assert!(kl_bernoulli(0.5, 1.0).is_err());

        // kl ≥ 2·H² on a grid.
        for pk in 1..20 {
            for qk in 1..20 {
                let (p, q) = (pk as f64 / 20.0, qk as f64 / 20.0);
                let h2 = 1.0 - (p * q).sqrt() - ((1.0 - p) * (1.0 - q)).sqrt();
                assert!(kl_bernoulli(p, q).unwrap() >= 2.0 * h2 - 1e-12);
            }
        }

        assert_eq!(hellinger_x_lower_bound(0.4, 2.0, 2.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            hellinger_x_lower_bound(0.5, 4.0, 1.0).unwrap(),
            0.04,
            epsilon = 1e-15
        );

        // Bound ≤ actual KL of the induced declaration probabilities.
        for mk in 1..19 {
            let mu = 0.05 * mk as f64;
            for g1k in 0..10 {
                for g2k in 0..10 {
                    let g1 = 0.2 + 0.48 * g1k as f64;
                    let g2 = 0.2 + 0.48 * g2k as f64;
                    let p = conformity_probability(mu, g1).unwrap();
                    let q = conformity_probability(mu, g2).unwrap();
                    let kl = kl_bernoulli(p, q).unwrap();
                    let bound = hellinger_x_lower_bound(mu, g1, g2).unwrap();
                    assert!(
                        kl >= bound - 1e-12,
                        "mu={mu} g1={g1} g2={g2}: kl={kl} bound={bound}"
                    );
                }
            }
        }
    }
}
