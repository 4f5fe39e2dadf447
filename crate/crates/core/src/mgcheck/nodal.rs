use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::{solve_quasilinear, DecouplingField, SolverOptions, TimeSpaceGrid};
use crate::problem::{mollify, shift_coefficients, CoefficientSet};

pub const BISECTION_TOL: f64 = 1e-6;
pub const BISECTION_MAX_ITER: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalResult {
    pub t: f64,
    pub x: Vec<f64>,
    pub n: usize,
    pub eps_n: f64,
    pub u_lower: f64,
    pub u_upper: f64,
    pub alpha_star: Option<f64>,
    pub y_target: Option<f64>,
    /// second-derivative bound of the shifted solutions
    pub c_n: f64,
    /// the σ-tolerance had to be tightened after `c_n` was measured
    pub remollified: bool,
    pub iterations: usize,
}

impl NodalResult {
    pub fn width(&self) -> f64 {
        self.u_upper - self.u_lower
    }
}

/// Mollified problem at index `n` with its lower (`α = 0`) and upper
/// (`α = 1`) shifted solutions. Any `y` between the two values at `(t, x)`
/// is reached by some intermediate shift `α`.
pub struct NodalProblem {
    coeffs: CoefficientSet,
    grid: TimeSpaceGrid,
    n: usize,
    eps_n: f64,
    c_n: f64,
    remollified: bool,
    opts: SolverOptions,
    lower: DecouplingField,
    upper: DecouplingField,
}

impl NodalProblem {
    /// The σ-tolerance starts at `1/(n·C₀)` with `C₀ = max(sup σ, 1)`. Once
    /// both shifted solutions exist their largest second difference gives
    /// `Cₙ`; if the tolerance exceeds `1/(n·C₀·Cₙ)` the coefficients are
    /// mollified again at that tolerance and the solutions recomputed.
    pub fn new(coeffs: &CoefficientSet, grid: &TimeSpaceGrid, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("nodal index n must be positive".into()));
        }
        let opts = SolverOptions::default();
        let c0 = coeffs.bounds.sup.max(1.0);
        let mut eps_n = 1.0 / (n as f64 * c0);
        let mut mollified = mollify(coeffs, n, eps_n)?;
        let (mut lower, mut upper) = solve_pair(&mollified, grid, n, &opts)?;
        let c_n = lower.max_second_difference().max(upper.max_second_difference()).max(1.0);
        let needed = 1.0 / (n as f64 * c0 * c_n);
        let remollified = eps_n > needed;
        if remollified {
            eps_n = needed;
            mollified = mollify(coeffs, n, eps_n)?;
            (lower, upper) = solve_pair(&mollified, grid, n, &opts)?;
        }
        Ok(NodalProblem { coeffs: mollified, grid: grid.clone(), n, eps_n, c_n, remollified, opts, lower, upper })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mollified(&self) -> &CoefficientSet {
        &self.coeffs
    }

    /// The solution with shift `α`; the endpoints are cached.
    pub fn field(&self, alpha: f64) -> Result<DecouplingField> {
        if alpha == 0.0 {
            return Ok(self.lower.clone());
        }
        if alpha == 1.0 {
            return Ok(self.upper.clone());
        }
        solve_quasilinear(&shift_coefficients(&self.coeffs, self.n, alpha)?, &self.grid, &self.opts)
    }

    fn value(&self, alpha: f64, t: f64, x: &[f64]) -> Result<f64> {
        let f = match alpha {
            0.0 => return Ok(self.lower.interpolate(t, x, None)),
            1.0 => return Ok(self.upper.interpolate(t, x, None)),
            a => self.field(a)?,
        };
        Ok(f.interpolate(t, x, None))
    }

    fn check_point(&self, t: f64, x: &[f64]) -> Result<()> {
        if x.len() != self.grid.dim() || !self.grid.contains(x) || !(0.0..=self.grid.t_end).contains(&t) {
            return Err(Error::Domain(format!("query point ({t}, {x:?}) lies outside the grid")));
        }
        Ok(())
    }

    pub fn bounds(&self, t: f64, x: &[f64]) -> Result<NodalResult> {
        self.check_point(t, x)?;
        Ok(NodalResult {
            t,
            x: x.to_vec(),
            n: self.n,
            eps_n: self.eps_n,
            u_lower: self.lower.interpolate(t, x, None),
            u_upper: self.upper.interpolate(t, x, None),
            alpha_star: None,
            y_target: None,
            c_n: self.c_n,
            remollified: self.remollified,
            iterations: 0,
        })
    }

    /// Bisection for the shift `α` whose solution passes through `y` at
    /// `(t, x)`; `α ↦ uᵅ(t, x)` is nondecreasing.
    pub fn select(&self, t: f64, x: &[f64], y: f64, tol: f64) -> Result<NodalResult> {
        let mut res = self.bounds(t, x)?;
        if !(res.u_lower..=res.u_upper).contains(&y) {
            return Err(Error::OutOfNodalSet { target: y, lower: res.u_lower, upper: res.u_upper });
        }
        res.y_target = Some(y);
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let (mut best, mut best_err) =
            if y - res.u_lower <= res.u_upper - y { (0.0, y - res.u_lower) } else { (1.0, res.u_upper - y) };
        let mut iterations = 0;
        while best_err > tol && iterations < BISECTION_MAX_ITER {
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            let v = self.value(mid, t, x)?;
            if (v - y).abs() < best_err {
                best = mid;
                best_err = (v - y).abs();
            }
            if v < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        res.alpha_star = Some(best);
        res.iterations = iterations;
        Ok(res)
    }
}

fn solve_pair(
    coeffs: &CoefficientSet,
    grid: &TimeSpaceGrid,
    n: usize,
    opts: &SolverOptions,
) -> Result<(DecouplingField, DecouplingField)> {
    let lo = shift_coefficients(coeffs, n, 0.0)?;
    let hi = shift_coefficients(coeffs, n, 1.0)?;
    let (a, b) = rayon::join(|| solve_quasilinear(&lo, grid, opts), || solve_quasilinear(&hi, grid, opts));
    Ok((a?, b?))
}

pub fn nodal_bounds(coeffs: &CoefficientSet, grid: &TimeSpaceGrid, t: f64, x: &[f64], n: usize) -> Result<NodalResult> {
    NodalProblem::new(coeffs, grid, n)?.bounds(t, x)
}

pub fn nodal_select(
    coeffs: &CoefficientSet,
    grid: &TimeSpaceGrid,
    t: f64,
    x: &[f64],
    y_target: f64,
    n: usize,
    tol: f64,
) -> Result<NodalResult> {
    NodalProblem::new(coeffs, grid, n)?.select(t, x, y_target, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{problem, Params};

    fn grid() -> TimeSpaceGrid {
        TimeSpaceGrid::uniform(1.0, 40, 81, -4.0, 4.0).unwrap()
    }

    #[test]
    fn linear_width_follows_superposition() {
        let c = problem("heat-x", &Params::new()).unwrap();
        for n in [5, 10, 20] {
            let r = nodal_bounds(&c, &grid(), 0.0, &[0.3], n).unwrap();
            let expect = 4.0 / n as f64 + 2.0 / n as f64;
            assert!((r.width() - expect).abs() < 1e-8, "n={n}: {} vs {expect}", r.width());
        }
    }

    #[test]
    fn terminal_interval_is_g_plus_minus_inv_n() {
        let c = problem("heat-x", &Params::new()).unwrap();
        let p = NodalProblem::new(&c, &grid(), 10).unwrap();
        let r = p.bounds(1.0, &[0.5]).unwrap();
        let g = p.mollified().terminal(&[0.5]);
        assert!((g - 0.5).abs() <= 0.1);
        assert!((r.u_lower - (g - 0.1)).abs() < 1e-10 && (r.u_upper - (g + 0.1)).abs() < 1e-10, "{r:?}");
    }

    #[test]
    fn example_interval_contains_zero_and_selects() {
        let c = problem("example-2.1", &Params::new()).unwrap();
        let p = NodalProblem::new(&c, &grid(), 10).unwrap();
        let b = p.bounds(0.0, &[0.0]).unwrap();
        assert!(b.u_lower < 0.0 && 0.0 < b.u_upper);
        let s = p.select(0.0, &[0.0], 0.0, BISECTION_TOL).unwrap();
        let alpha = s.alpha_star.unwrap();
        assert!((p.value(alpha, 0.0, &[0.0]).unwrap()).abs() <= BISECTION_TOL);
        assert!(matches!(p.select(0.0, &[0.0], 5.0, 1e-6), Err(Error::OutOfNodalSet { .. })));
    }

    #[test]
    fn endpoints_and_midpoint() {
        let c = problem("heat-x", &Params::new()).unwrap();
        let p = NodalProblem::new(&c, &grid(), 8).unwrap();
        let b = p.bounds(0.0, &[0.0]).unwrap();
        let lo = p.select(0.0, &[0.0], b.u_lower, 1e-6).unwrap();
        assert_eq!(lo.alpha_star, Some(0.0));
        let mid = p.select(0.0, &[0.0], 0.5 * (b.u_lower + b.u_upper), 1e-6).unwrap();
        assert!((mid.alpha_star.unwrap() - 0.5).abs() <= 1e-6);
    }

    #[test]
    fn shifted_solutions_are_ordered() {
        let c = problem("quasilinear-tanh", &Params::new()).unwrap();
        let p = NodalProblem::new(&c, &TimeSpaceGrid::uniform(1.0, 20, 41, -3.0, 3.0).unwrap(), 5).unwrap();
        let fields: Vec<_> = [0.0, 0.3, 0.7, 1.0].iter().map(|&a| p.field(a).unwrap()).collect();
        for w in fields.windows(2) {
            assert!(w[0].values().iter().zip(w[1].values()).all(|(a, b)| a <= b));
        }
    }
}
