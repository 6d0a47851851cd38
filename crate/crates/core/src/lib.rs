// NaN-rejecting guards are written `!(x > 0.0)` on purpose, and per-agent
// state lives in parallel arrays indexed together.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

//! Interacting Pólya urn model of opinion dynamics under social pressure.
//!
//! Agents on a weighted connected graph repeatedly declare a binary opinion;
//! the probability of declaring 1 is f(μ, γ) where μ is the running weighted
//! fraction of 1's observed from neighbors and γ the agent's bias parameter.
//! The crate provides the simulator, the estimators that recover γ and the
//! inherent belief φ = 1{γ > 1} from declaration histories, consensus
//! classification and rate machinery, likelihood-ratio diagnostics, and a
//! reproducible experiment harness with a CSV/JSON file contract.

pub mod consensus;
pub mod dynamics;
pub mod estimators;
pub mod graph;
pub mod harness;
pub mod likelihood;
pub mod martingale;
pub mod matrix;
