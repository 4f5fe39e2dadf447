//! Statistical checks of the forward-backward martingale problem on path
//! bundles, and the nodal interval of reachable initial values.

mod checks;
mod nodal;
mod report;

pub use checks::{
    check_cross_variation, check_martingale, check_quadratic_variation, cross_variation_gaps,
    cross_variation_refinement, feynman_kac_residual, inject_drift, moment_bounds, MartingaleProcess, MomentReport,
    RefinementLevel, DEFAULT_THRESHOLD, MIN_PATHS, REFINEMENT_RATIO,
};
pub use nodal::{nodal_bounds, nodal_select, NodalProblem, NodalResult, BISECTION_MAX_ITER, BISECTION_TOL};
pub use report::{CheckDetail, CheckReport, Criterion};
