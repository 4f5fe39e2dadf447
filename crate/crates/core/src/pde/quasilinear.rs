use serde::{Deserialize, Serialize};

use super::field::{gradient, BoundaryMode, DecouplingField, FieldMeta};
use super::TimeSpaceGrid;
use crate::error::{Error, Result};
use crate::linalg::BandMatrix;
use crate::problem::CoefficientSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub picard_tol: f64,
    pub picard_max: usize,
    /// initial Picard damping; halved once on oscillation
    pub damping: f64,
    pub boundary: BoundaryMode,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { picard_tol: 1e-10, picard_max: 100, damping: 1.0, boundary: BoundaryMode::Extended }
    }
}

/// Quintic ramp: 1 on `|r| ≤ 0.9`, 0 at `|r| = 1`, C² in between.
pub(crate) fn cutoff(grid: &TimeSpaceGrid, x: &[f64]) -> f64 {
    let mut out = 1.0;
    for (a, v) in x.iter().enumerate() {
        let c = 0.5 * (grid.lo[a] + grid.hi[a]);
        let half = 0.5 * (grid.hi[a] - grid.lo[a]);
        let r = ((v - c) / half).abs();
        if r >= 1.0 {
            return 0.0;
        }
        if r > 0.9 {
            let s = (r - 0.9) / 0.1;
            out *= 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
        }
    }
    out
}

/// Lateral boundary data `(t, node) ↦ g_b(t, x)` as `base(x) + (T−t)·rate(x)`.
pub(crate) struct Boundary {
    pub base: Vec<f64>,
    pub rate: Vec<f64>,
}

impl Boundary {
    pub fn value(&self, grid: &TimeSpaceGrid, k: usize, idx: usize) -> f64 {
        self.base[idx] + (grid.t_end - grid.time(k)) * self.rate[idx]
    }
}

fn boundary_data(coeffs: &CoefficientSet, grid: &TimeSpaceGrid, mode: BoundaryMode) -> Boundary {
    let d = grid.dim();
    let nodes = grid.node_count();
    let t_end = grid.t_end;
    let mut base = vec![0.0; nodes];
    let mut rate = vec![0.0; nodes];
    let mut x = vec![0.0; d];
    let mut xs = vec![0.0; d];
    let zeros = vec![0.0; d];
    let mut sigma = vec![0.0; d * d];
    for idx in 0..nodes {
        if !grid.is_boundary(idx) {
            continue;
        }
        grid.node_coords(idx, &mut x);
        match mode {
            BoundaryMode::Cutoff => {
                base[idx] = coeffs.terminal(&x) * cutoff(grid, &x);
                rate[idx] = coeffs.driver(t_end, &x, 0.0, &zeros);
            }
            BoundaryMode::Extended => {
                let g0 = coeffs.terminal(&x);
                let mut dg = vec![0.0; d];
                let mut hess = vec![0.0; d * d];
                let mut at = |shift: &[(usize, f64)]| {
                    xs.copy_from_slice(&x);
                    for &(a, s) in shift {
                        xs[a] += s;
                    }
                    coeffs.terminal(&xs)
                };
                for a in 0..d {
                    let h = grid.dx(a);
                    let (p, m) = (at(&[(a, h)]), at(&[(a, -h)]));
                    dg[a] = (p - m) / (2.0 * h);
                    hess[a * d + a] = (p - 2.0 * g0 + m) / (h * h);
                    for b in (a + 1)..d {
                        let hb = grid.dx(b);
                        let v = (at(&[(a, h), (b, hb)]) - at(&[(a, h), (b, -hb)]) - at(&[(a, -h), (b, hb)])
                            + at(&[(a, -h), (b, -hb)]))
                            / (4.0 * h * hb);
                        hess[a * d + b] = v;
                        hess[b * d + a] = v;
                    }
                }
                coeffs.sigma(t_end, &x, g0, &dg, &mut sigma);
                let mut op = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        let a_ij: f64 = (0..d).map(|m| sigma[i * d + m] * sigma[j * d + m]).sum();
                        op += 0.5 * a_ij * hess[i * d + j];
                    }
                }
                base[idx] = g0;
                rate[idx] = op + coeffs.driver(t_end, &x, g0, &dg);
            }
        }
    }
    Boundary { base, rate }
}

/// Add the row `u_p − dt·(A : D²u)_p` for interior node `p` with
/// `A = ½σσᵀ` (row-major d×d).
pub(crate) fn assemble_row(
    mat: &mut BandMatrix,
    grid: &TimeSpaceGrid,
    p: usize,
    a: &[f64],
    dt: f64,
    drift: Option<&[f64]>,
) {
    let d = grid.dim();
    let mut diag = 1.0;
    for i in 0..d {
        let s = grid.stride(i);
        let h = grid.dx(i);
        let c = dt * a[i * d + i] / (h * h);
        let adv = drift.map_or(0.0, |b| dt * b[i] / (2.0 * h));
        diag += 2.0 * c;
        mat.add(p, p + s, -c - adv);
        mat.add(p, p - s, -c + adv);
        for j in (i + 1)..d {
            let sj = grid.stride(j);
            let hj = grid.dx(j);
            // 2·A_ij·∂ᵢ∂ⱼ with the four-point mixed stencil
            let m = dt * 2.0 * a[i * d + j] / (4.0 * h * hj);
            mat.add(p, p + s + sj, -m);
            mat.add(p, p - s - sj, -m);
            mat.add(p, p + s - sj, m);
            mat.add(p, p - s + sj, m);
        }
    }
    mat.add(p, p, diag);
}

pub(crate) fn half_bandwidth(grid: &TimeSpaceGrid) -> usize {
    if grid.dim() == 1 {
        1
    } else {
        grid.n_x[0] + 1
    }
}

/// Solve `∂ₜu + ½σσᵀ(t,x,u,∂ₓu):∂²u + f(t,x,u,∂ₓu) = 0`, `u(T) = g`, by
/// backward Euler with frozen-coefficient (Picard) iteration per step.
pub fn solve_quasilinear(
    coeffs: &CoefficientSet,
    grid: &TimeSpaceGrid,
    opts: &SolverOptions,
) -> Result<DecouplingField> {
    let d = grid.dim();
    if coeffs.dim() != d {
        return Err(Error::Config(format!("problem dimension {} does not match grid dimension {d}", coeffs.dim())));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) || opts.picard_max == 0 {
        return Err(Error::Config("damping must lie in (0, 1] and picard_max ≥ 1".into()));
    }
    let nodes = grid.node_count();
    let dt = grid.dt();
    let boundary = boundary_data(coeffs, grid, opts.boundary);
    let coupled = coeffs.depends_on_solution();

    let mut u = vec![0.0; (grid.n_t + 1) * nodes];
    let mut x = vec![0.0; d];
    for idx in 0..nodes {
        grid.node_coords(idx, &mut x);
        u[grid.n_t * nodes + idx] = coeffs.terminal(&x);
    }

    let coords: Vec<Vec<f64>> = (0..nodes)
        .map(|idx| {
            let mut c = vec![0.0; d];
            grid.node_coords(idx, &mut c);
            c
        })
        .collect();
    let mut meta = FieldMeta { boundary: opts.boundary, ..FieldMeta::default() };
    let mut sigma = vec![0.0; d * d];
    let mut a = vec![0.0; d * d];
    let mut grad = vec![0.0; nodes * d];

    for k in (0..grid.n_t).rev() {
        let t = grid.time(k);
        let (head, tail) = u.split_at_mut((k + 1) * nodes);
        let next = &tail[..nodes];
        let current = &mut head[k * nodes..];
        let mut iterate = next.to_vec();
        let mut damping = opts.damping;
        let mut prev_change = f64::INFINITY;
        let mut iters = 0;
        loop {
            iters += 1;
            gradient(grid, &iterate, &mut grad);
            let mut mat = BandMatrix::new(nodes, half_bandwidth(grid));
            let mut rhs = vec![0.0; nodes];
            for p in 0..nodes {
                if grid.is_boundary(p) {
                    mat.set(p, p, 1.0);
                    rhs[p] = boundary.value(grid, k, p);
                    continue;
                }
                let (y, z) = (iterate[p], &grad[p * d..(p + 1) * d]);
                coeffs.sigma(t, &coords[p], y, z, &mut sigma);
                for i in 0..d {
                    for j in 0..d {
                        a[i * d + j] = 0.5 * (0..d).map(|m| sigma[i * d + m] * sigma[j * d + m]).sum::<f64>();
                    }
                }
                assemble_row(&mut mat, grid, p, &a, dt, None);
                rhs[p] = next[p] + dt * coeffs.driver(t, &coords[p], y, z);
            }
            mat.solve(&mut rhs)?;
            if rhs.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { iterations: iters, residual: f64::INFINITY });
            }
            let mut change = 0.0f64;
            for (v, w) in iterate.iter_mut().zip(&rhs) {
                let new = (1.0 - damping) * *v + damping * w;
                change = change.max((new - *v).abs());
                *v = new;
            }
            if !coupled {
                // the frozen system is the exact linear step
                iterate.copy_from_slice(&rhs);
                change = 0.0;
            }
            if change <= opts.picard_tol {
                meta.residual_sup = meta.residual_sup.max(change);
                break;
            }
            if iters >= opts.picard_max {
                return Err(Error::Divergence { iterations: iters, residual: change });
            }
            if iters >= 2 && change > prev_change && damping > 0.5 {
                damping = 0.5;
                meta.damping_reduced = true;
            }
            prev_change = change;
        }
        meta.picard_iters_used = meta.picard_iters_used.max(iters);
        current[..nodes].copy_from_slice(&iterate);
    }
    Ok(DecouplingField::from_values(grid.clone(), u, meta))
}
