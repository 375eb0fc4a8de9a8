use thiserror::Error;

use crate::kinetics::State;

/// Errors produced by model construction, series evaluation and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("coefficient lookup (j={j}, k={k}) outside tabulated range (max {max})")]
    TableRange { j: usize, k: usize, max: usize },

    #[error("cluster index {index} outside truncated system of size {size}")]
    IndexRange { index: usize, size: usize },

    #[error(
        "ratio limit not resolved: probe {probe} gave {value_at_probe}, \
         probe {half_probe} gave {value_at_half}"
    )]
    LimitNotResolved {
        probe: usize,
        half_probe: usize,
        value_at_probe: f64,
        value_at_half: f64,
    },

    #[error("supercritical density {rho} has no equilibrium (critical density {rho_s})")]
    SupercriticalDensity { rho: f64, rho_s: f64 },

    #[error("root search did not reach residual {tol} within {iterations} iterations")]
    RootNotConverged { tol: f64, iterations: usize },

    #[error("state length {found} does not match expected length {expected}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "integration stalled at t={t}: step size {h} fell below the stiffness floor; \
         explicit stepping is outside its domain of validity here"
    )]
    StiffnessFailure { t: f64, h: f64, last_state: Box<State> },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed state file: {0}")]
    MalformedStateFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;
