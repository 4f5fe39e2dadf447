//! FBSDE coefficient sets `(b, σ, f, g)`, assumption validation and the
//! coefficient transformations used by the existence constructions.

mod catalog;
mod mollify;
mod transform;
mod validate;

use std::fmt;
use std::ops::BitOr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::simulate::PathFunctional;

pub use catalog::{catalog_ids, problem, Params};
pub use mollify::{mollify, MOLLIFIER_NODES};
pub use transform::{remove_drift, shift_coefficients, weak_to_strong, DriftKernel, StrongForm};
pub use validate::{validate_assumptions, AssumptionCheck, AssumptionReport, LipschitzEstimate};

/// `(t, x, y, z, out)`: writes a vector (drift) or a row-major matrix (σ).
pub type VecFn = Arc<dyn Fn(f64, &[f64], f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, y, z) -> f`.
pub type ScalarFn = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Closed-form decoupling field `(T, t, x) -> u(t, x)` for oracle problems.
pub type ExactFn = Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>;

/// Which arguments a coefficient actually reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Deps(u8);

impl Deps {
    pub const NONE: Deps = Deps(0);
    pub const T: Deps = Deps(1);
    pub const X: Deps = Deps(2);
    pub const Y: Deps = Deps(4);
    pub const Z: Deps = Deps(8);
    pub const ALL: Deps = Deps(15);

    pub fn contains(self, other: Deps) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn reads_solution(self) -> bool {
        self.0 & (Deps::Y.0 | Deps::Z.0) != 0
    }
}

impl BitOr for Deps {
    type Output = Deps;
    fn bitor(self, rhs: Deps) -> Deps {
        Deps(self.0 | rhs.0)
    }
}

/// Declared constants of the standing assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    /// sup-norm bound on σ, f(·,·,0,0) and g
    pub sup: f64,
    /// ellipticity floor: σ ≥ c₀ I
    pub ellipticity: f64,
    /// Lipschitz constant in (x, y, z)
    pub lipschitz: f64,
}

/// Sampling plan for the assumption checks: a box in `(t, x, y, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePlan {
    pub t: (f64, f64),
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub z: (f64, f64),
    pub count: usize,
    pub seed: u64,
    /// smallest separation of Lipschitz probe pairs
    pub diff_step: f64,
    pub tolerance: f64,
}

impl Default for ProbePlan {
    fn default() -> Self {
        ProbePlan {
            t: (0.0, 1.0),
            x: (-2.0, 2.0),
            y: (-2.0, 2.0),
            z: (-2.0, 2.0),
            count: 2000,
            seed: 1,
            diff_step: 1e-4,
            tolerance: 1e-9,
        }
    }
}

/// A probe point `(t, x, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: f64,
    pub z: Vec<f64>,
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(t={}, x={:?}, y={}, z={:?})", self.t, self.x, self.y, self.z)
    }
}

/// The FBSDE coefficient tuple `(b, σ, f, g)` plus assumption metadata.
#[derive(Clone)]
pub struct CoefficientSet {
    name: String,
    dim: usize,
    drift: VecFn,
    sigma: VecFn,
    driver: ScalarFn,
    terminal: TerminalFn,
    drift_deps: Deps,
    sigma_deps: Deps,
    driver_deps: Deps,
    terminal_varies: bool,
    pub bounds: Bounds,
    pub probes: ProbePlan,
    path_drift: Option<PathFunctional>,
    exact: Option<ExactFn>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("bounds", &self.bounds)
            .field("path_drift", &self.path_drift)
            .finish_non_exhaustive()
    }
}

impl CoefficientSet {
    /// `b = 0`, `σ = I`, `f = 0`, `g = 0` in dimension `dim`.
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        CoefficientSet {
            name: name.into(),
            dim,
            drift: Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0)),
            sigma: Arc::new(move |_, _, _, _, out: &mut [f64]| {
                out.fill(0.0);
                for i in 0..dim {
                    out[i * dim + i] = 1.0;
                }
            }),
            driver: Arc::new(|_, _, _, _| 0.0),
            terminal: Arc::new(|_| 0.0),
            drift_deps: Deps::NONE,
            sigma_deps: Deps::NONE,
            driver_deps: Deps::NONE,
            terminal_varies: false,
            bounds: Bounds { sup: 1.0, ellipticity: 1.0, lipschitz: 0.0 },
            probes: ProbePlan::default(),
            path_drift: None,
            exact: None,
        }
    }

    pub fn with_drift<F>(mut self, deps: Deps, f: F) -> Self
    where
        F: Fn(f64, &[f64], f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.drift = Arc::new(f);
        self.drift_deps = deps;
        self
    }

    pub fn with_sigma<F>(mut self, deps: Deps, f: F) -> Self
    where
        F: Fn(f64, &[f64], f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.sigma = Arc::new(f);
        self.sigma_deps = deps;
        self
    }

    /// Scalar diffusion in d = 1.
    pub fn with_scalar_sigma<F>(self, deps: Deps, f: F) -> Self
    where
        F: Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.with_sigma(deps, move |t, x, y, z, out| out[0] = f(t, x[0], y, z[0]))
    }

    pub fn with_driver<F>(mut self, deps: Deps, f: F) -> Self
    where
        F: Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.driver = Arc::new(f);
        self.driver_deps = deps;
        self
    }

    pub fn with_terminal<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.terminal = Arc::new(f);
        self.terminal_varies = true;
        self
    }

    pub fn with_bounds(mut self, sup: f64, ellipticity: f64, lipschitz: f64) -> Self {
        self.bounds = Bounds { sup, ellipticity, lipschitz };
        self
    }

    pub fn with_probes(mut self, probes: ProbePlan) -> Self {
        self.probes = probes;
        self
    }

    pub fn with_path_drift(mut self, functional: PathFunctional) -> Self {
        self.path_drift = Some(functional);
        self
    }

    pub fn with_exact<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.exact = Some(Arc::new(f));
        self
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn drift(&self, t: f64, x: &[f64], y: f64, z: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, y, z, out)
    }

    #[inline]
    pub fn sigma(&self, t: f64, x: &[f64], y: f64, z: &[f64], out: &mut [f64]) {
        (self.sigma)(t, x, y, z, out)
    }

    #[inline]
    pub fn driver(&self, t: f64, x: &[f64], y: f64, z: &[f64]) -> f64 {
        (self.driver)(t, x, y, z)
    }

    #[inline]
    pub fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    pub fn drift_deps(&self) -> Deps {
        self.drift_deps
    }

    pub fn sigma_deps(&self) -> Deps {
        self.sigma_deps
    }

    pub fn driver_deps(&self) -> Deps {
        self.driver_deps
    }

    pub fn terminal_varies(&self) -> bool {
        self.terminal_varies
    }

    /// Whether `b`, `σ` or `f` read `(y, z)`, i.e. the system is coupled.
    pub fn depends_on_solution(&self) -> bool {
        self.drift_deps.reads_solution() || self.sigma_deps.reads_solution() || self.driver_deps.reads_solution()
    }

    pub fn path_drift(&self) -> Option<&PathFunctional> {
        self.path_drift.as_ref()
    }

    pub fn exact(&self) -> Option<&ExactFn> {
        self.exact.as_ref()
    }

    pub(crate) fn drift_fn(&self) -> &VecFn {
        &self.drift
    }

    pub(crate) fn sigma_fn(&self) -> &VecFn {
        &self.sigma
    }

    pub(crate) fn driver_fn(&self) -> &ScalarFn {
        &self.driver
    }

    pub(crate) fn terminal_fn(&self) -> &TerminalFn {
        &self.terminal
    }

    pub(crate) fn set_raw(
        &mut self,
        drift: Option<(VecFn, Deps)>,
        sigma: Option<(VecFn, Deps)>,
        driver: Option<(ScalarFn, Deps)>,
        terminal: Option<TerminalFn>,
    ) {
        if let Some((f, d)) = drift {
            self.drift = f;
            self.drift_deps = d;
        }
        if let Some((f, d)) = sigma {
            self.sigma = f;
            self.sigma_deps = d;
        }
        if let Some((f, d)) = driver {
            self.driver = f;
            self.driver_deps = d;
        }
        if let Some(g) = terminal {
            self.terminal = g;
        }
    }

    pub(crate) fn drop_exact(&mut self) {
        self.exact = None;
    }

    /// σ evaluated into a fresh matrix; convenience for tests and reports.
    pub fn sigma_matrix(&self, t: f64, x: &[f64], y: f64, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.sigma(t, x, y, z, &mut out);
        out
    }

    pub fn drift_vector(&self, t: f64, x: &[f64], y: f64, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift(t, x, y, z, &mut out);
        out
    }
}
