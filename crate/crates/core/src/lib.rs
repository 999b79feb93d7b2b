//! Inexact Newton solver for distributed control of the stationary
//! incompressible Navier-Stokes equations, with augmented Lagrangian and
//! block pressure convection-diffusion preconditioning.

pub mod cavity;
pub mod chebyshev;
pub mod error;
pub mod factor;
pub mod grid;
pub mod kkt;
pub mod krylov;
pub mod newton;
pub mod operators;
pub mod precond;
#[cfg(test)]
mod proptests;
pub mod report;
pub mod sparse;

pub use cavity::{expand_sweep, run_case, run_sweep, CaseResult, CaseSpec, Problem};
pub use error::{Error, Result};
pub use grid::coupled_dof_count;
pub use kkt::{default_gamma, Approach, KktParams, KktSystem, LpsMode, Model};
pub use krylov::{KrylovConfig, KrylovStats};
pub use newton::{newton_solve, LinearSolver, NewtonConfig, NewtonTrace};
pub use operators::Discretization;
pub use precond::{OuterKind, PrecondStack, StackConfig};
pub use report::{Format, Report};
pub use sparse::SparseMatrix;
