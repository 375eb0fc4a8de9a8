//! Numerical laboratory for cutoff coagulation-fragmentation (generalized
//! Becker-Döring) cluster kinetics.
//!
//! The system tracks concentrations `c_j` of clusters of `j` particles.
//! Clusters merge at rates `a_jk` and split at rates `b_jk`, with reactions
//! restricted to `min{j,k} <= N`, and the net flux through a reaction channel
//! is
//!
//! ```text
//! W_jk = a_jk c_j c_k - b_jk c_{j+k}
//! ```
//!
//! Under detailed balance the equilibria are `c_j = Q_j z^j`, parameterized
//! by the monomer activity `z` up to a critical activity `z_s`; the density
//! of the critical equilibrium is the critical density `rho_s`. Below
//! `rho_s` relaxation is strong (in the mass norm `sum j |c_j|`); above it
//! the excess mass escapes toward ever larger clusters and only the head of
//! the distribution settles. The crate provides:
//!
//! * [`coefficients`] — kernel families under detailed balance, with the
//!   structural hypotheses checked numerically,
//! * [`equilibrium`] — critical activity/density, equilibrium profiles and
//!   the monotone density-to-activity inversion,
//! * [`kinetics`] — the mass-conserving truncated dynamics and an adaptive
//!   embedded Runge-Kutta integrator,
//! * [`analysis`] — tail masses, moments, strong distance, tail envelopes
//!   and the flux identities used as convergence diagnostics,
//! * [`io`] — CSV trajectory/diagnostics export and a binary state format.

// `!(x > 0.0)` rather than `x <= 0.0` throughout: the negated form also
// rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod coefficients;
pub mod equilibrium;
mod error;
pub mod io;
pub mod kinetics;

pub use coefficients::{CoefficientModel, KernelFamily, ValidationOptions, ValidationReport};
pub use equilibrium::{CriticalData, Density, EquilibriumProfile};
pub use error::{Error, Result};
pub use kinetics::{IntegratorConfig, State, System, Trajectory};
