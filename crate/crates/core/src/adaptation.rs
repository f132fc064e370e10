//! Replication and drop control of the number of copies.
//!
//! At each cache expiry the provider compares its measured load with the
//! reference load and replicates, drops, or hands the copy over as usual.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptationError {
    #[error("initial providers {c0} must be in (0, {n_nodes})")]
    ProvidersOutOfRange { c0: usize, n_nodes: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "kebab-case")]
pub enum Epsilon {
    /// Tolerance in req/s.
    Absolute(f64),
    /// Tolerance as a fraction of the reference load.
    Relative(f64),
}

impl Epsilon {
    pub fn resolve(self, mu_ref: f64) -> f64 {
        match self {
            Epsilon::Absolute(e) => e,
            Epsilon::Relative(f) => f * mu_ref,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationParams {
    /// Reference load per provider (req/s). Filled from the initial demand
    /// during validation when left empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_ref: Option<f64>,
    pub epsilon: Epsilon,
    /// Copies are never dropped below this count.
    pub min_copies: usize,
}

impl Default for AdaptationParams {
    fn default() -> Self {
        Self { mu_ref: None, epsilon: Epsilon::Relative(0.2), min_copies: 1 }
    }
}

/// Reference load that makes `c0` providers absorb the initial aggregate
/// demand: `c0 * mu_ref = (n_nodes - c0) * lambda0`.
pub fn compute_mu_ref(n_nodes: usize, c0: usize, lambda0: f64) -> Result<f64, AdaptationError> {
    if c0 == 0 || c0 >= n_nodes {
        return Err(AdaptationError::ProvidersOutOfRange { c0, n_nodes });
    }
    Ok((n_nodes - c0) as f64 * lambda0 / c0 as f64)
}

/// Provider count at which every provider carries exactly `mu_ref`:
/// `N * λ / (λ + mu_ref)`.
pub fn ideal_provider_count(n_nodes: usize, lambda: f64, mu_ref: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    n_nodes as f64 * lambda / (lambda + mu_ref)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Decision {
    Replicate,
    Drop,
    Handover,
}

/// Compares the measured load `served / tau` with the band
/// `[mu_ref - eps, mu_ref + eps]`.
pub fn expiry_decision(served: u32, tau: f64, mu_ref: f64, epsilon: f64) -> Decision {
    let load = f64::from(served) / tau;
    if load > mu_ref + epsilon {
        Decision::Replicate
    } else if load < mu_ref - epsilon {
        Decision::Drop
    } else {
        Decision::Handover
    }
}

/// What the engine must do with an expiring copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Execution {
    /// The decision actually carried out.
    pub effective: Decision,
    /// Number of legacy moves to launch from the holder (0, 1 or 2).
    pub moves: usize,
}

/// Applies the copy floor: a drop that would go below `min_copies` turns
/// into a handover.
pub fn execute_decision(decision: Decision, copies: usize, min_copies: usize) -> Execution {
    match decision {
        Decision::Replicate => Execution { effective: Decision::Replicate, moves: 2 },
        Decision::Drop if copies > min_copies.max(1) => Execution { effective: Decision::Drop, moves: 0 },
        Decision::Drop | Decision::Handover => Execution { effective: Decision::Handover, moves: 1 },
    }
}
