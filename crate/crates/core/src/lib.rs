//! Numerical laboratory for forward-backward SDEs in weak formulation.
//!
//! The decoupling field `u` of a quasilinear parabolic PDE is solved by
//! finite differences ([`pde`]), turned into path ensembles
//! `(B, X, Y, Z, N)` by Euler–Maruyama ([`simulate`]) and checked against the
//! forward-backward martingale problem ([`mgcheck`]). [`control`] covers the
//! Hamiltonians of the associated control problems and two experiments
//! contrasting strong and weak formulations.

// `!(x > 0.0)` is used on purpose: it also rejects NaN. Index loops are kept
// where several arrays share one index.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod control;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mgcheck;
pub mod pde;
pub mod problem;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
