//! Finite-difference solvers for the decoupling PDE and HJB equations, with
//! residual and regularity diagnostics.

mod diagnostics;
mod field;
mod grid;
mod hjb;
mod quasilinear;

pub use diagnostics::{pde_residual, regularity_estimates, PdeResidual, RegularityReport, MAX_PAIRS};
pub use field::{gradient, BoundaryMode, DecouplingField, FieldMeta};
pub use grid::TimeSpaceGrid;
pub use hjb::{solve_hjb, HjbOptions};
pub use quasilinear::{solve_quasilinear, SolverOptions};
