//! Weighted social network and the spectral primitives that drive consensus
//! classification: the Perron root and positive left eigenvector of the
//! (scaled) row-normalized adjacency matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::matrix::SquareMatrix;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge ({i}, {j}) has negative weight {weight}")]
    NegativeWeight { i: usize, j: usize, weight: f64 },
    #[error("unordered pair ({i}, {j}) listed more than once")]
    DuplicateEdge { i: usize, j: usize },
    #[error("vertex {vertex} has no positive-weight edge")]
    IsolatedVertex { vertex: usize },
    #[error("graph is not connected: vertex {unreached} unreachable from vertex 0")]
    Disconnected { unreached: usize },
    #[error("need at least 2 agents, got {n}")]
    TooFewAgents { n: usize },
    #[error("gamma[{index}] = {value}; scaling vector must be strictly positive")]
    NonPositiveGamma { index: usize, value: f64 },
    #[error(
        "power iteration did not reach tol {tol:e} within {max_iter} iterations (residual {residual:e})"
    )]
    NoConvergence {
        tol: f64,
        max_iter: usize,
        residual: f64,
    },
    #[error("edge list line {line}: {msg}")]
    BadEdgeLine { line: usize, msg: String },
    #[error("unknown graph generator spec '{spec}'")]
    UnknownGenerator { spec: String },
}

/// Connected weighted undirected graph with row-normalized adjacency W = D⁻¹A.
#[derive(Debug, Clone)]
pub struct Network {
    n: usize,
    weights: SquareMatrix,
    degrees: Vec<f64>,
    normalized: SquareMatrix,
}

impl Network {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.degrees[i]
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j)
    }

    pub fn weights(&self) -> &SquareMatrix {
        &self.weights
    }

    /// W = D⁻¹A, each row summing to one.
    pub fn normalized(&self) -> &SquareMatrix {
        &self.normalized
    }

    /// μ = W β, the neighborhood pressure vector.
    pub fn neighborhood_average(&self, beta: &[f64]) -> Vec<f64> {
        self.normalized.apply(beta)
    }
}

/// Build a network from an undirected edge list. Each undirected edge appears
/// once; a self-loop (i, i, w) contributes w to deg(i) once.
pub fn build_network(edges: &[(usize, usize, f64)]) -> Result<Network, GraphError> {
    let n = edges
        .iter()
        .map(|&(i, j, _)| i.max(j) + 1)
        .max()
        .unwrap_or(0);
    if n < 2 {
        return Err(GraphError::TooFewAgents { n });
    }
    let mut weights = SquareMatrix::zeros(n);
    let mut seen = std::collections::HashSet::new();
    for &(i, j, w) in edges {
        if w < 0.0 {
            return Err(GraphError::NegativeWeight { i, j, weight: w });
        }
        let key = (i.min(j), i.max(j));
        if !seen.insert(key) {
            return Err(GraphError::DuplicateEdge { i: key.0, j: key.1 });
        }
        weights.set(i, j, w);
        weights.set(j, i, w);
    }

    let degrees: Vec<f64> = (0..n).map(|i| weights.row(i).iter().sum()).collect();
    for (i, &d) in degrees.iter().enumerate() {
        if d <= 0.0 {
            return Err(GraphError::IsolatedVertex { vertex: i });
        }
    }

    // Connectivity on the positive-weight support.
    let mut reached = vec![false; n];
    let mut queue = std::collections::VecDeque::from([0usize]);
    reached[0] = true;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if !reached[v] && weights.get(u, v) > 0.0 {
                reached[v] = true;
                queue.push_back(v);
            }
        }
    }
    if let Some(unreached) = reached.iter().position(|&r| !r) {
        return Err(GraphError::Disconnected { unreached });
    }

    let normalized = SquareMatrix::from_fn(n, |i, j| weights.get(i, j) / degrees[i]);
    Ok(Network {
        n,
        weights,
        degrees,
        normalized,
    })
}

/// Parse `i j weight` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize, f64)>, GraphError> {
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(GraphError::BadEdgeLine {
                line: lineno + 1,
                msg: format!("expected 'i j weight', got '{line}'"),
            });
        }
        let parse = |tok: &str, what: &str| -> Result<usize, GraphError> {
            tok.parse().map_err(|_| GraphError::BadEdgeLine {
                line: lineno + 1,
                msg: format!("bad {what} '{tok}'"),
            })
        };
        let i = parse(toks[0], "vertex")?;
        let j = parse(toks[1], "vertex")?;
        let w: f64 = toks[2].parse().map_err(|_| GraphError::BadEdgeLine {
            line: lineno + 1,
            msg: format!("bad weight '{}'", toks[2]),
        })?;
        edges.push((i, j, w));
    }
    Ok(edges)
}

/// Generator shorthands: `complete:n`, `cycle:n`, `star:n`, `gnp:n:p:seed`.
/// All edges have unit weight. `star:n` is one center plus n−1 leaves.
pub fn generate(spec: &str) -> Result<Network, GraphError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let unknown = || GraphError::UnknownGenerator {
        spec: spec.to_string(),
    };
    let parse_n = |tok: &str| tok.parse::<usize>().map_err(|_| unknown());
    match parts.as_slice() {
        ["complete", n] => {
            let n = parse_n(n)?;
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    edges.push((i, j, 1.0));
                }
            }
            build_network(&edges)
        }
        ["cycle", n] => {
            let n = parse_n(n)?;
            if n < 2 {
                return Err(GraphError::TooFewAgents { n });
            }
            let mut edges: Vec<(usize, usize, f64)> =
                (0..n.saturating_sub(1)).map(|i| (i, i + 1, 1.0)).collect();
            if n > 2 {
                edges.push((n - 1, 0, 1.0));
            }
            build_network(&edges)
        }
        ["star", n] => {
            let n = parse_n(n)?;
            if n < 2 {
                return Err(GraphError::TooFewAgents { n });
            }
            let edges: Vec<(usize, usize, f64)> = (1..n).map(|i| (0, i, 1.0)).collect();
            build_network(&edges)
        }
        ["gnp", n, p, seed] => {
            let n = parse_n(n)?;
            let p: f64 = p.parse().map_err(|_| unknown())?;
            let seed: u64 = seed.parse().map_err(|_| unknown())?;
            gnp(n, p, seed)
        }
        _ => Err(unknown()),
    }
}

/// Erdős–Rényi G(n, p) with unit weights. Resamples deterministically (the
/// attempt index is mixed into the seed) until the draw is connected.
pub fn gnp(n: usize, p: f64, seed: u64) -> Result<Network, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewAgents { n });
    }
    let mut last = GraphError::Disconnected { unreached: 0 };
    for attempt in 0..64u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::harness::seed::mix(seed, attempt));
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < p {
                    edges.push((i, j, 1.0));
                }
            }
        }
        match build_network(&edges) {
            Ok(net) if net.n() == n => return Ok(net),
            Ok(_) => last = GraphError::Disconnected { unreached: n - 1 },
            Err(
                e @ (GraphError::Disconnected { .. }
                | GraphError::IsolatedVertex { .. }
                | GraphError::TooFewAgents { .. }),
            ) => {
                last = e;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// diag(γ)·W, or diag(γ)⁻¹·W when `inverse` is set.
pub fn scaled_matrix(
    net: &Network,
    gamma: &[f64],
    inverse: bool,
) -> Result<SquareMatrix, GraphError> {
    assert_eq!(gamma.len(), net.n());
    for (index, &g) in gamma.iter().enumerate() {
        if !(g > 0.0) {
            return Err(GraphError::NonPositiveGamma { index, value: g });
        }
    }
    let w = net.normalized();
    Ok(SquareMatrix::from_fn(net.n(), |i, j| {
        let s = if inverse { 1.0 / gamma[i] } else { gamma[i] };
        s * w.get(i, j)
    }))
}

/// Perron root and left eigenvector of a nonnegative irreducible matrix.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    /// Spectral radius λ ≥ 0.
    pub radius: f64,
    /// Positive left eigenvector scaled so vᵀ1 = 1.
    pub left_vector: Vec<f64>,
    pub iterations: usize,
    /// ‖vᵀM − λvᵀ‖∞ of the returned pair.
    pub residual: f64,
}

fn residual_inf(m: &SquareMatrix, v: &[f64], lambda: f64) -> f64 {
    m.transpose_apply(v)
        .iter()
        .zip(v)
        .map(|(y, vi)| (y - lambda * vi).abs())
        .fold(0.0, f64::max)
}

fn rayleigh(m: &SquareMatrix, v: &[f64]) -> f64 {
    let y = m.transpose_apply(v);
    let num: f64 = y.iter().zip(v).map(|(a, b)| a * b).sum();
    let den: f64 = v.iter().map(|a| a * a).sum();
    num / den
}

fn normalize_l1(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

/// One power-iteration phase; returns Ok on residual ≤ tol.
#[allow(clippy::type_complexity)]
fn power_phase(
    m: &SquareMatrix,
    v0: Vec<f64>,
    tol: f64,
    max_iter: usize,
    iters_used: &mut usize,
) -> Result<(f64, Vec<f64>), (f64, Vec<f64>, f64)> {
    let mut v = v0;
    let mut prev = v.clone();
    let mut best_res = f64::INFINITY;
    for k in 0..max_iter {
        *iters_used += 1;
        let mut y = m.transpose_apply(&v);
        normalize_l1(&mut y);
        let lambda = rayleigh(m, &y);
        let res = residual_inf(m, &y, lambda);
        best_res = best_res.min(res);
        if res <= tol {
            return Ok((lambda, y));
        }
        // Two-step average kills the ±λ oscillation of bipartite-like
        // support; probe it periodically.
        if k % 8 == 7 {
            let mut avg: Vec<f64> = y.iter().zip(&prev).map(|(a, b)| 0.5 * (a + b)).collect();
            normalize_l1(&mut avg);
            let lam_avg = rayleigh(m, &avg);
            let res_avg = residual_inf(m, &avg, lam_avg);
            if res_avg <= tol {
                return Ok((lam_avg, avg));
            }
        }
        prev = std::mem::replace(&mut v, y);
    }
    let lambda = rayleigh(m, &v);
    Err((lambda, v, best_res))
}

/// Power iteration on Mᵀ from the uniform positive start. Falls back to the
/// shifted matrix M + I (same eigenvectors, radius shifted by one) when the
/// plain iteration oscillates.
pub fn perron(m: &SquareMatrix, tol: f64, max_iter: usize) -> Result<SpectralResult, GraphError> {
    assert!(tol > 0.0, "tol must be positive");
    let n = m.n();
    let v0 = vec![1.0 / n as f64; n];
    let mut iterations = 0usize;
    let budget = (max_iter / 2).max(1);
    match power_phase(m, v0.clone(), tol, budget, &mut iterations) {
        Ok((lambda, v)) => Ok(SpectralResult {
            radius: lambda,
            residual: residual_inf(m, &v, lambda),
            left_vector: v,
            iterations,
        }),
        Err(_) => {
            let shifted = m.shifted(1.0);
            match power_phase(&shifted, v0, tol, max_iter.saturating_sub(budget).max(1), &mut iterations) {
                Ok((lambda_shifted, v)) => {
                    let lambda = lambda_shifted - 1.0;
                    Ok(SpectralResult {
                        radius: lambda,
                        residual: residual_inf(m, &v, lambda),
                        left_vector: v,
                        iterations,
                    })
                }
                Err((_, _, best)) => Err(GraphError::NoConvergence {
                    tol,
                    max_iter,
                    residual: best,
                }),
            }
        }
    }
}

pub const PERRON_TOL: f64 = 1e-12;
pub const PERRON_MAX_ITER: usize = 100_000;

/// `perron` with the default tolerance and iteration budget.
pub fn perron_default(m: &SquareMatrix) -> Result<SpectralResult, GraphError> {
    perron(m, PERRON_TOL, PERRON_MAX_ITER)
}
