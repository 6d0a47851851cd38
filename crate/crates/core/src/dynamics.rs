//! Stochastic simulation engine for declared opinions: each step every agent
//! draws a binary declaration with probability f(μᵢ(t), γᵢ) and all running
//! sufficient statistics (β, μ, Σμ, declaration history) are updated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::Network;

/// Agents must not be exactly neutral; |γ − 1| below this is rejected.
pub const MIN_GAMMA_GAP: f64 = 1e-9;

/// Absolute slack when asserting the μ-band, covering dot-product rounding.
const BAND_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("domain error: {what}")]
    DomainError { what: String },
    #[error("gamma[{index}] = {value} must be > 0")]
    NonPositiveGamma { index: usize, value: f64 },
    #[error("gamma[{index}] = {value} is neutral; |gamma - 1| must be at least {MIN_GAMMA_GAP:e}")]
    NeutralGamma { index: usize, value: f64 },
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("fixed-point iteration did not converge in {max_iter} iterations (residual {residual:e})")]
    NoConvergence { max_iter: usize, residual: f64 },
}

/// Per-agent bias parameters γᵢ (> 0, ≠ 1) with the implied inherent beliefs
/// φᵢ = 1 ⟺ γᵢ > 1 and the symmetric reparameterization χᵢ = log γᵢ.
#[derive(Debug, Clone)]
pub struct BiasProfile {
    gamma: Vec<f64>,
    chi: Vec<f64>,
}

impl BiasProfile {
    pub fn new(gamma: Vec<f64>) -> Result<Self, DynamicsError> {
        for (index, &g) in gamma.iter().enumerate() {
            if !(g > 0.0) {
                return Err(DynamicsError::NonPositiveGamma { index, value: g });
            }
            if (g - 1.0).abs() < MIN_GAMMA_GAP {
                return Err(DynamicsError::NeutralGamma { index, value: g });
            }
        }
        let chi = gamma.iter().map(|g| g.ln()).collect();
        Ok(BiasProfile { gamma, chi })
    }

    pub fn uniform(n: usize, gamma: f64) -> Result<Self, DynamicsError> {
        BiasProfile::new(vec![gamma; n])
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn gamma(&self, i: usize) -> f64 {
        self.gamma[i]
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gamma
    }

    pub fn chi(&self, i: usize) -> f64 {
        self.chi[i]
    }

    /// Inherent belief: true ⟺ γᵢ > 1.
    pub fn phi(&self, i: usize) -> bool {
        self.gamma[i] > 1.0
    }
}

/// Initial declaration mass b⁰/b¹ per agent (b¹ stored, b⁰ = 1 − b¹ derived,
/// so the pair sums to one exactly) and the induced neighborhood mass m⁰/m¹.
#[derive(Debug, Clone)]
pub struct InitialSettings {
    b1: Vec<f64>,
    m0: Vec<f64>,
    m1: Vec<f64>,
}

impl InitialSettings {
    pub fn new(net: &Network, b1: &[f64]) -> Result<Self, DynamicsError> {
        if b1.len() != net.n() {
            return Err(DynamicsError::DimensionMismatch {
                what: "b1",
                expected: net.n(),
                got: b1.len(),
            });
        }
        for &b in b1 {
            if !(b > 0.0 && b < 1.0) {
                return Err(DynamicsError::DomainError {
                    what: format!("b1 entries must lie in (0,1), got {b}"),
                });
            }
        }
        let b0: Vec<f64> = b1.iter().map(|b| 1.0 - b).collect();
        let dot = |vals: &[f64], i: usize| -> f64 {
            (0..net.n()).map(|j| net.weight(i, j) * vals[j]).sum()
        };
        let m0 = (0..net.n()).map(|i| dot(&b0, i)).collect();
        let m1 = (0..net.n()).map(|i| dot(b1, i)).collect();
        Ok(InitialSettings {
            b1: b1.to_vec(),
            m0,
            m1,
        })
    }

    pub fn uniform(net: &Network, b1: f64) -> Result<Self, DynamicsError> {
        InitialSettings::new(net, &vec![b1; net.n()])
    }

    pub fn b0(&self, i: usize) -> f64 {
        1.0 - self.b1[i]
    }

    pub fn b1(&self, i: usize) -> f64 {
        self.b1[i]
    }

    pub fn m0(&self, i: usize) -> f64 {
        self.m0[i]
    }

    pub fn m1(&self, i: usize) -> f64 {
        self.m1[i]
    }

    pub(crate) fn len(&self) -> usize {
        self.b1.len()
    }
}

/// Probability that an agent under pressure μ with bias γ declares opinion 1:
/// f(μ, γ) = γμ / (1 + (γ − 1)μ).
pub fn conformity_probability(mu: f64, gamma: f64) -> Result<f64, DynamicsError> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(DynamicsError::DomainError {
            what: format!("mu = {mu} outside (0,1)"),
        });
    }
    if !(gamma > 0.0) {
        return Err(DynamicsError::DomainError {
            what: format!("gamma = {gamma} must be positive"),
        });
    }
    Ok(conformity(mu, gamma))
}

/// Unchecked f(μ, γ); callers guarantee interior μ and positive γ.
#[inline]
pub(crate) fn conformity(mu: f64, gamma: f64) -> f64 {
    gamma * mu / (1.0 + (gamma - 1.0) * mu)
}

/// Full simulation state at time t. Time convention: t = 1 carries initial
/// settings only; declarations happen at t = 2, 3, …
#[derive(Debug, Clone)]
pub struct SimState {
    t: u64,
    b1: Vec<f64>,
    ones: Vec<u64>,
    beta: Vec<f64>,
    mu: Vec<f64>,
    m_total: Vec<f64>,
    mu_cumsum: Vec<f64>,
    history: Vec<Vec<(f64, bool)>>,
    kappa: f64,
    band_violations: u64,
}

impl SimState {
    pub fn n(&self) -> usize {
        self.beta.len()
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn ones(&self) -> &[u64] {
        &self.ones
    }

    /// Σ_{τ=1..t−1} μᵢ(τ), one of the two sufficient statistics of the
    /// inherent-belief estimator.
    pub fn mu_cumsum(&self) -> &[f64] {
        &self.mu_cumsum
    }

    /// Mᵢ(t) = m⁰ᵢ + m¹ᵢ + (t−1)·deg(i).
    pub fn m_total(&self) -> &[f64] {
        &self.m_total
    }

    /// β̄ᵢ(t) = Sᵢ / (t−1); only defined once a declaration happened.
    pub fn beta_bar(&self, i: usize) -> Option<f64> {
        (self.t >= 2).then(|| self.ones[i] as f64 / (self.t - 1) as f64)
    }

    /// Declaration history of one agent: (μᵢ(τ−1), ψᵢ,τ) for τ = 2..t.
    pub fn history(&self, i: usize) -> &[(f64, bool)] {
        &self.history[i]
    }

    /// Run constant κ with μᵢ(t) ∈ [κ/t, 1 − κ/t] for the whole run.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Count of steps at which the μ-band was violated (0 on a correct run).
    pub fn band_violations(&self) -> u64 {
        self.band_violations
    }

    fn check_band(&mut self) {
        let lo = self.kappa / self.t as f64;
        for &m in &self.mu {
            if m < lo - BAND_SLACK || m > 1.0 - lo + BAND_SLACK {
                self.band_violations += 1;
            }
        }
    }

    /// Recompute (β, μ, Σμ) from the stored history and compare with the
    /// incrementally maintained values; returns the largest absolute gap.
    pub fn consistency_gap(&self, net: &Network) -> f64 {
        let n = self.n();
        let mut gap: f64 = 0.0;
        let mut beta = self.b1.clone(); // β(1)
        let mut mu_cum = vec![0.0; n];
        for step in 0..(self.t - 1) as usize {
            let mu = net.neighborhood_average(&beta);
            for i in 0..n {
                gap = gap.max((mu[i] - self.history[i][step].0).abs());
                mu_cum[i] += mu[i];
            }
            let t_next = (step + 2) as f64;
            for i in 0..n {
                let ones: u64 = self.history[i][..=step].iter().map(|p| p.1 as u64).sum();
                beta[i] = (self.b1[i] + ones as f64) / t_next;
            }
        }
        let mu = net.neighborhood_average(&beta);
        for i in 0..n {
            gap = gap.max((beta[i] - self.beta[i]).abs());
            gap = gap.max((mu[i] - self.mu[i]).abs());
            gap = gap.max((mu_cum[i] - self.mu_cumsum[i]).abs());
        }
        gap
    }
}

/// State at t = 1: β(1) = b¹, μ(1) = W b¹, empty history.
pub fn init_state(net: &Network, init: &InitialSettings) -> Result<SimState, DynamicsError> {
    let n = net.n();
    if init.len() != n {
        return Err(DynamicsError::DimensionMismatch {
            what: "initial settings",
            expected: n,
            got: init.len(),
        });
    }
    let b1: Vec<f64> = (0..n).map(|i| init.b1(i)).collect();
    let beta = b1.clone();
    let mu = net.neighborhood_average(&beta);
    // κ = minᵢ min(m⁰ᵢ, m¹ᵢ) / maxᵢ max(m⁰ᵢ + m¹ᵢ, deg(i)); valid for
    // arbitrary initial mass, reduces to 1/max deg for unit-scale settings.
    let min_mass = (0..n)
        .map(|i| init.m0(i).min(init.m1(i)))
        .fold(f64::INFINITY, f64::min);
    let max_scale = (0..n)
        .map(|i| (init.m0(i) + init.m1(i)).max(net.degree(i)))
        .fold(0.0, f64::max);
    let kappa = min_mass / max_scale;
    let m_total = (0..n).map(|i| init.m0(i) + init.m1(i)).collect();
    let mut state = SimState {
        t: 1,
        b1,
        ones: vec![0; n],
        beta,
        mu,
        m_total,
        mu_cumsum: vec![0.0; n],
        history: vec![Vec::new(); n],
        kappa,
        band_violations: 0,
    };
    state.check_band();
    Ok(state)
}

/// Advance one step with caller-supplied uniforms, one per agent in agent
/// order. ψᵢ = 1 ⟺ uᵢ < f(μᵢ(t), γᵢ).
pub fn step_with_uniforms(state: &mut SimState, net: &Network, bias: &BiasProfile, us: &[f64]) {
    let n = state.n();
    assert_eq!(us.len(), n);
    assert_eq!(bias.len(), n);
    for i in 0..n {
        let mu = state.mu[i];
        let psi = us[i] < conformity(mu, bias.gamma(i));
        if psi {
            state.ones[i] += 1;
        }
        state.history[i].push((mu, psi));
        state.mu_cumsum[i] += mu;
    }
    state.t += 1;
    let t = state.t as f64;
    for i in 0..n {
        state.beta[i] = (state.b1[i] + state.ones[i] as f64) / t;
        state.m_total[i] += net.degree(i);
    }
    state.mu = net.neighborhood_average(&state.beta);
    state.check_band();
}

/// Advance one step, consuming exactly one uniform variate per agent in
/// ascending agent order.
pub fn step(state: &mut SimState, net: &Network, bias: &BiasProfile, rng: &mut impl Rng) {
    let us: Vec<f64> = (0..state.n()).map(|_| rng.gen::<f64>()).collect();
    step_with_uniforms(state, net, bias, &us);
}

/// State snapshot recorded at a checkpoint.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: u64,
    pub beta: Vec<f64>,
    pub mu: Vec<f64>,
    pub ones: Vec<u64>,
    pub mu_cumsum: Vec<f64>,
}

impl Snapshot {
    fn of(state: &SimState) -> Self {
        Snapshot {
            t: state.t,
            beta: state.beta.clone(),
            mu: state.mu.clone(),
            ones: state.ones.clone(),
            mu_cumsum: state.mu_cumsum.clone(),
        }
    }
}

/// A finished run: checkpointed snapshots plus the final state (which holds
/// the full declaration history).
#[derive(Debug)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub state: SimState,
}

/// Simulate to `horizon`, snapshotting at each checkpoint time. Deterministic
/// given (inputs, seed); checkpoints must be strictly increasing in [2, T].
pub fn run(
    net: &Network,
    bias: &BiasProfile,
    init: &InitialSettings,
    horizon: u64,
    seed: u64,
    checkpoints: &[u64],
) -> Result<Trajectory, DynamicsError> {
    assert!(horizon >= 2, "horizon must be at least 2");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = init_state(net, init)?;
    let mut snapshots = Vec::with_capacity(checkpoints.len());
    let mut next_cp = checkpoints.iter().copied().peekable();
    while state.t < horizon {
        step(&mut state, net, bias, &mut rng);
        while next_cp.peek() == Some(&state.t) {
            snapshots.push(Snapshot::of(&state));
            next_cp.next();
        }
    }
    Ok(Trajectory { snapshots, state })
}

/// Expected one-step declaration probabilities F(β, γ)ᵢ = f((Wβ)ᵢ, γᵢ).
pub fn expected_update(
    beta: &[f64],
    net: &Network,
    bias: &BiasProfile,
) -> Result<Vec<f64>, DynamicsError> {
    if beta.len() != net.n() {
        return Err(DynamicsError::DimensionMismatch {
            what: "beta",
            expected: net.n(),
            got: beta.len(),
        });
    }
    for &b in beta {
        if !(b > 0.0 && b < 1.0) {
            return Err(DynamicsError::DomainError {
                what: format!("beta entry {b} outside (0,1)"),
            });
        }
    }
    let mu = net.neighborhood_average(beta);
    Ok((0..net.n())
        .map(|i| conformity(mu[i], bias.gamma(i)))
        .collect())
}

/// Residual of the equilibrium equations: (γᵢ−1)βᵢμᵢ + βᵢ − γᵢμᵢ, zero iff β
/// is a fixed point of the expected dynamics.
pub fn equilibrium_residual(beta: &[f64], net: &Network, bias: &BiasProfile) -> Vec<f64> {
    assert_eq!(beta.len(), net.n());
    let mu = net.neighborhood_average(beta);
    (0..net.n())
        .map(|i| {
            let g = bias.gamma(i);
            (g - 1.0) * beta[i] * mu[i] + beta[i] - g * mu[i]
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub beta: Vec<f64>,
    /// All components bounded away from {0, 1}. A run attracted to a
    /// boundary point halts with β within a few residual-tolerances of the
    /// boundary, so the margin is √tol rather than tol itself.
    pub interior: bool,
    pub iterations: usize,
    pub residual: f64,
}

/// Damped fixed-point iteration β ← (1−η)β + ηF(β, γ) from β = ½·1, η = ½.
pub fn find_interior_equilibrium(
    net: &Network,
    bias: &BiasProfile,
    tol: f64,
    max_iter: usize,
) -> Result<Equilibrium, DynamicsError> {
    assert!(tol > 0.0);
    let n = net.n();
    let mut beta = vec![0.5; n];
    let mut residual = f64::INFINITY;
    for k in 0..max_iter {
        let f = expected_update(&beta, net, bias)?;
        residual = beta
            .iter()
            .zip(&f)
            .map(|(b, fb)| (b - fb).abs())
            .fold(0.0, f64::max);
        if residual <= tol {
            let margin = tol.sqrt();
            let interior = beta.iter().all(|&b| b > margin && b < 1.0 - margin);
            return Ok(Equilibrium {
                beta,
                interior,
                iterations: k,
                residual,
            });
        }
        for i in 0..n {
            beta[i] = 0.5 * beta[i] + 0.5 * f[i];
        }
    }
    Err(DynamicsError::NoConvergence { max_iter, residual })
}
