//! Joint uplink-power and remote-compute allocation for MEC-enabled
//! cell-free massive MIMO.
//!
//! The crate simulates a network of distributed multi-antenna access points
//! that jointly serve single-antenna users and offer them remote compute for
//! task offloading. For each network snapshot it solves a joint allocation
//! problem — minimize total uplink transmit power while maximizing the
//! minimum spectral efficiency, subject to per-user offloading deadlines and
//! per-node compute budgets — with a successive convex approximation loop
//! around a log-barrier Newton solver.
//!
//! Pipeline, in dependency order:
//!
//! 1. [`geometry`] — AP grid, user drops, wrap-around pathloss, spatial
//!    correlation matrices.
//! 2. [`cluster`] — pilot assignment and user-centric serving clusters.
//! 3. [`channel`] — correlated Rayleigh channel realizations.
//! 4. [`estimation`] — per-AP MMSE channel estimation from shared pilots.
//! 5. [`combining`] — P-MMSE / L-MMSE / MRC combiners and the affine SINR
//!    decomposition used by the optimizer.
//! 6. [`solver`] — the inner convex subproblem (concave SE lower bound,
//!    reciprocal latency terms, linear budgets) and its barrier solver.
//! 7. [`sca`] — the outer SCA loop for the cell-free and cellular variants,
//!    compute-rate rounding and latency accounting.

pub mod channel;
pub mod cluster;
pub mod combining;
pub mod config;
pub mod estimation;
pub mod geometry;
pub mod linalg;
pub mod rng;
pub mod solver;

pub use config::{NetworkMode, SimConfig};
pub use geometry::NetworkSnapshot;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (violated invariant, undefined geometry, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A numerical routine failed beyond the built-in fallbacks.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The allocation problem has an empty feasible set for this snapshot.
    #[error("infeasible instance: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;
