//! Radial ground states of the p-Laplacian Choquard equation
//!
//! ```text
//! -Δ_p u + |u|^{p-2} u = (I_α * F(u)) f(u)   in ℝ^N
//! ```
//!
//! together with numerical checks of the identities and estimates that its
//! weak solutions satisfy: Pohozaev, Nehari, the cutoff variational identity,
//! integrability ladders, level-set decay, exponential tails and the
//! Hardy–Littlewood–Sobolev scaling structure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod functional;
pub mod grid;
pub mod identities;
pub mod quad;
pub mod riesz;
pub mod solver;

pub use error::{Error, Result};
pub use functional::{energy_report, weak_residual, EnergyReport, NonlinearitySpec, ProblemParams};
pub use grid::{build_grid, GridScheme, RadialGrid, RadialProfile};
pub use riesz::{build_kernel, riesz_constant, RieszOperator};
pub use solver::{solve_ground_state, Solution, SolveConfig};
