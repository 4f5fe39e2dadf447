use serde::{Deserialize, Serialize};

use super::field::{BoundaryMode, DecouplingField, FieldMeta};
use super::quasilinear::{assemble_row, cutoff, Boundary};
use super::TimeSpaceGrid;
use crate::control::{hamiltonian_h, HamiltonianSpec};
use crate::error::{Error, Result};
use crate::linalg::BandMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HjbOptions {
    pub policy_max: usize,
    /// stop once the solved slice moves by less than this (sup norm)
    pub value_tol: f64,
    pub boundary: BoundaryMode,
}

impl Default for HjbOptions {
    fn default() -> Self {
        HjbOptions { policy_max: 50, value_tol: 1e-12, boundary: BoundaryMode::Extended }
    }
}

fn derivatives(slice: &[f64], i: usize, h: f64) -> (f64, f64) {
    let z = (slice[i + 1] - slice[i - 1]) / (2.0 * h);
    let g = (slice[i + 1] - 2.0 * slice[i] + slice[i - 1]) / (h * h);
    (z, g)
}

/// Solve `∂ₜu + H(t, ∂ₓu, ∂²u) = 0`, `u(T) = g`, in one dimension by
/// backward Euler with policy iteration at every step.
pub fn solve_hjb(spec: &HamiltonianSpec, grid: &TimeSpaceGrid, opts: &HjbOptions) -> Result<DecouplingField> {
    if grid.dim() != 1 {
        return Err(Error::Config("the HJB solver is one-dimensional".into()));
    }
    let n = grid.n_x[0];
    let h = grid.dx(0);
    let dt = grid.dt();
    let t_end = grid.t_end;
    let xs: Vec<f64> = (0..n).map(|i| grid.coord(0, i)).collect();

    let mut base = vec![0.0; n];
    let mut rate = vec![0.0; n];
    for &i in &[0, n - 1] {
        let x = xs[i];
        match opts.boundary {
            BoundaryMode::Cutoff => {
                base[i] = spec.terminal(x) * cutoff(grid, &[x]);
                rate[i] = hamiltonian_h(spec, t_end, x, 0.0, 0.0).0;
            }
            BoundaryMode::Extended => {
                let (gm, g0, gp) = (spec.terminal(x - h), spec.terminal(x), spec.terminal(x + h));
                base[i] = g0;
                rate[i] = hamiltonian_h(spec, t_end, x, (gp - gm) / (2.0 * h), (gp - 2.0 * g0 + gm) / (h * h)).0;
            }
        }
    }
    let boundary = Boundary { base, rate };

    let mut u = vec![0.0; (grid.n_t + 1) * n];
    let mut controls = vec![spec.control_lo; (grid.n_t + 1) * n];
    for i in 0..n {
        u[grid.n_t * n + i] = spec.terminal(xs[i]);
    }
    let policy = |t: f64, slice: &[f64], out: &mut [f64]| {
        for i in 1..n - 1 {
            let (z, g) = derivatives(slice, i, h);
            out[i] = hamiltonian_h(spec, t, xs[i], z, g).1;
        }
        out[0] = out[1];
        out[n - 1] = out[n - 2];
    };
    policy(t_end, &u[grid.n_t * n..], &mut controls[grid.n_t * n..]);

    let mut meta = FieldMeta { boundary: opts.boundary, ..FieldMeta::default() };
    let mut state = vec![0.0; n];
    let mut alpha = vec![0.0; n];
    let mut fresh = vec![0.0; n];
    for k in (0..grid.n_t).rev() {
        let t = grid.time(k);
        for i in 1..n - 1 {
            state[i] = spec.reward_state(t, xs[i]);
        }
        let next = u[(k + 1) * n..(k + 2) * n].to_vec();
        policy(t, &next, &mut alpha);
        let mut previous: Option<Vec<f64>> = None;
        let mut iters = 0;
        let solved = loop {
            iters += 1;
            let mut mat = BandMatrix::new(n, 1);
            let mut rhs = vec![0.0; n];
            for p in [0, n - 1] {
                mat.set(p, p, 1.0);
                rhs[p] = boundary.value(grid, k, p);
            }
            for i in 1..n - 1 {
                let a = alpha[i];
                let s = spec.sigma(t, a);
                let b = [spec.drift(t, a)];
                assemble_row(&mut mat, grid, i, &[0.5 * s * s], dt, Some(&b));
                rhs[i] = next[i] + dt * (spec.reward_control(t, a) + state[i]);
            }
            mat.solve(&mut rhs)?;
            policy(t, &rhs, &mut fresh);
            let stable = fresh == alpha;
            let moved = previous
                .as_ref()
                .map(|p| p.iter().zip(&rhs).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
                .unwrap_or(f64::INFINITY);
            if stable || moved <= opts.value_tol {
                meta.residual_sup = meta.residual_sup.max(if stable { 0.0 } else { moved });
                break rhs;
            }
            if iters >= opts.policy_max {
                return Err(Error::Divergence { iterations: iters, residual: moved });
            }
            std::mem::swap(&mut alpha, &mut fresh);
            previous = Some(rhs);
        };
        meta.picard_iters_used = meta.picard_iters_used.max(iters);
        u[k * n..(k + 1) * n].copy_from_slice(&solved);
        policy(t, &solved, &mut controls[k * n..(k + 1) * n]);
    }
    Ok(DecouplingField::from_values(grid.clone(), u, meta).with_controls(controls))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::hamiltonian_spec;
    use crate::pde::{solve_quasilinear, SolverOptions};
    use crate::problem::{CoefficientSet, Deps};
    use std::collections::BTreeMap;

    #[test]
    fn drift_spec_has_zero_value_and_control_k() {
        let spec = hamiltonian_spec("drift-k", &BTreeMap::new()).unwrap();
        let grid = TimeSpaceGrid::uniform(1.0, 20, 41, -2.0, 2.0).unwrap();
        let f = solve_hjb(&spec, &grid, &HjbOptions::default()).unwrap();
        assert!(f.values().iter().all(|v| v.abs() < 1e-12));
        let c = f.controls().unwrap();
        assert!(c.iter().all(|a| (a - 0.3).abs() < 1e-6));
    }

    #[test]
    fn singleton_reduces_to_linear_pde() {
        let spec = HamiltonianSpec::new("one", 1.5, 1.5, 2)
            .unwrap()
            .with_sigma(|_, a| a)
            .with_reward(|_, a| 0.1 * a, |_, _| 0.0)
            .with_terminal(|x| x.sin());
        let grid = TimeSpaceGrid::uniform(1.0, 40, 81, -4.0, 4.0).unwrap();
        let hjb = solve_hjb(&spec, &grid, &HjbOptions::default()).unwrap();
        let coeffs = CoefficientSet::new("lin", 1)
            .with_scalar_sigma(Deps::NONE, |_, _, _, _| 1.5)
            .with_driver(Deps::NONE, |_, _, _, _| 0.15)
            .with_terminal(|x| x[0].sin());
        let lin = solve_quasilinear(&coeffs, &grid, &SolverOptions::default()).unwrap();
        for (a, b) in hjb.values().iter().zip(lin.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
