use rand::Rng;
use serde::{Deserialize, Serialize};

use super::field::{hessian_at, DecouplingField};
use crate::problem::CoefficientSet;
use crate::rng::path_stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeResidual {
    pub sup_residual: f64,
    /// root-mean-square over the evaluated nodes
    pub l2_residual: f64,
    /// residual per (step, node), time-major; zero where not evaluated
    #[serde(skip)]
    pub per_node: Vec<f64>,
}

/// Spatial operator `½σσᵀ:∂²u + f` at an interior node of slice `k`.
fn spatial_operator(
    field: &DecouplingField,
    coeffs: &CoefficientSet,
    k: usize,
    idx: usize,
    scratch: &mut Scratch,
) -> f64 {
    let g = &field.grid;
    let d = g.dim();
    let t = g.time(k);
    g.node_coords(idx, &mut scratch.x);
    let u = field.value(k, idx);
    let du = &field.gradient_slice(k)[idx * d..(idx + 1) * d];
    hessian_at(g, field.slice(k), idx, &mut scratch.hess);
    coeffs.sigma(t, &scratch.x, u, du, &mut scratch.sigma);
    let mut op = 0.0;
    for i in 0..d {
        for j in 0..d {
            let a: f64 = (0..d).map(|m| scratch.sigma[i * d + m] * scratch.sigma[j * d + m]).sum();
            op += 0.5 * a * scratch.hess[i * d + j];
        }
    }
    op + coeffs.driver(t, &scratch.x, u, du)
}

struct Scratch {
    x: Vec<f64>,
    hess: Vec<f64>,
    sigma: Vec<f64>,
}

/// `ℒu = ∂ₜu + ½σσᵀ:∂²u + f` on the inner half of the box. The time
/// derivative is the forward difference between slices `k` and `k+1`; the
/// spatial part is the average of the two slices, so the residual is
/// centred at `t_{k+½}` and measures the scheme's truncation error.
pub fn pde_residual(field: &DecouplingField, coeffs: &CoefficientSet) -> PdeResidual {
    let g = &field.grid;
    let d = g.dim();
    let nodes = g.node_count();
    let dt = g.dt();
    let mut scratch = Scratch { x: vec![0.0; d], hess: vec![0.0; d * d], sigma: vec![0.0; d * d] };
    let mut per_node = vec![0.0; g.n_t * nodes];
    let (mut sup, mut sq, mut count) = (0.0f64, 0.0, 0usize);
    for k in 0..g.n_t {
        for idx in 0..nodes {
            if g.is_boundary(idx) || !g.in_inner(idx, 0.5) {
                continue;
            }
            let time = (field.value(k + 1, idx) - field.value(k, idx)) / dt;
            let space = 0.5
                * (spatial_operator(field, coeffs, k, idx, &mut scratch)
                    + spatial_operator(field, coeffs, k + 1, idx, &mut scratch));
            let r = time + space;
            per_node[k * nodes + idx] = r;
            sup = sup.max(r.abs());
            sq += r * r;
            count += 1;
        }
    }
    PdeResidual { sup_residual: sup, l2_residual: if count > 0 { (sq / count as f64).sqrt() } else { 0.0 }, per_node }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub sup_u: f64,
    pub sup_du: f64,
    pub holder_t_half: f64,
    pub holder_alpha_du: f64,
    pub alpha: f64,
    pub delta: f64,
    pub pairs: usize,
}

pub const MAX_PAIRS: usize = 1_000_000;
const REGULARITY_SEED: u64 = 0x5eed;

/// Sup norms and Hölder quotients of `u` and `∂ₓu` over a seeded sample of
/// grid pairs (at most [`MAX_PAIRS`] of each kind).
pub fn regularity_estimates(field: &DecouplingField, alpha: f64, delta: f64) -> RegularityReport {
    let g = &field.grid;
    let d = g.dim();
    let nodes = g.node_count();
    let sup_u = field.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sup_du = (0..field.values().len())
        .map(|p| field.gradients()[p * d..(p + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);

    let steps = g.n_t + 1;
    let total_t_pairs = nodes * steps * (steps - 1) / 2;
    let mut rng = path_stream(REGULARITY_SEED, 0);

    // time Hölder-½ of u at fixed x; the full-span pair is always included
    let mut holder_t = 0.0f64;
    let quotient_t = |k1: usize, k2: usize, idx: usize| {
        let dt = (g.time(k1) - g.time(k2)).abs();
        (field.value(k1, idx) - field.value(k2, idx)).abs() / dt.sqrt()
    };
    for idx in 0..nodes {
        holder_t = holder_t.max(quotient_t(0, g.n_t, idx));
    }
    let mut pairs = nodes;
    if total_t_pairs <= MAX_PAIRS {
        for idx in 0..nodes {
            for k1 in 0..steps {
                for k2 in (k1 + 1)..steps {
                    holder_t = holder_t.max(quotient_t(k1, k2, idx));
                }
            }
        }
        pairs += total_t_pairs;
    } else {
        for _ in 0..MAX_PAIRS {
            let idx = rng.random_range(0..nodes);
            let k1 = rng.random_range(0..steps);
            let k2 = rng.random_range(0..steps);
            if k1 != k2 {
                holder_t = holder_t.max(quotient_t(k1, k2, idx));
            }
        }
        pairs += MAX_PAIRS;
    }

    // joint Hölder-α of ∂ₓu on t ≤ T − δ
    let last = (0..steps).rev().find(|&k| g.time(k) <= g.t_end - delta).unwrap_or(0);
    let mut x1 = vec![0.0; d];
    let mut x2 = vec![0.0; d];
    let mut holder_du = 0.0f64;
    let points = (last + 1) * nodes;
    let mut quotient_du = |p1: usize, p2: usize| {
        let (k1, i1) = (p1 / nodes, p1 % nodes);
        let (k2, i2) = (p2 / nodes, p2 % nodes);
        g.node_coords(i1, &mut x1);
        g.node_coords(i2, &mut x2);
        let dx = x1.iter().zip(&x2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let dt = (g.time(k1) - g.time(k2)).abs();
        let den = dx.powf(alpha) + dt.powf(alpha / 2.0);
        if den == 0.0 {
            return 0.0;
        }
        let a = &field.gradients()[(k1 * nodes + i1) * d..(k1 * nodes + i1 + 1) * d];
        let b = &field.gradients()[(k2 * nodes + i2) * d..(k2 * nodes + i2 + 1) * d];
        a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt() / den
    };
    let total_du_pairs = points * points.saturating_sub(1) / 2;
    if total_du_pairs <= MAX_PAIRS {
        for p1 in 0..points {
            for p2 in (p1 + 1)..points {
                holder_du = holder_du.max(quotient_du(p1, p2));
            }
        }
        pairs += total_du_pairs;
    } else {
        for _ in 0..MAX_PAIRS {
            let p1 = rng.random_range(0..points);
            // half the draws are grid neighbours, where quotients peak
            let p2 = if rng.random::<bool>() {
                let off = rng.random_range(1..=(nodes + 1).min(points - 1));
                if p1 + off < points {
                    p1 + off
                } else {
                    p1 - off
                }
            } else {
                rng.random_range(0..points)
            };
            holder_du = holder_du.max(quotient_du(p1, p2));
        }
        pairs += MAX_PAIRS;
    }

    RegularityReport { sup_u, sup_du, holder_t_half: holder_t, holder_alpha_du: holder_du, alpha, delta, pairs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::{solve_quasilinear, FieldMeta, SolverOptions, TimeSpaceGrid};
    use crate::problem::{problem, Params};

    fn exact_field(grid: &TimeSpaceGrid, f: impl Fn(f64, f64) -> f64) -> DecouplingField {
        let mut u = Vec::new();
        for k in 0..=grid.n_t {
            for i in 0..grid.n_x[0] {
                u.push(f(grid.time(k), grid.coord(0, i)));
            }
        }
        DecouplingField::from_values(grid.clone(), u, FieldMeta::default())
    }

    #[test]
    fn exact_linear_field_has_no_residual() {
        let c = problem("heat-x", &Params::new()).unwrap();
        let grid = TimeSpaceGrid::uniform(1.0, 20, 41, -2.0, 2.0).unwrap();
        let r = pde_residual(&exact_field(&grid, |_, x| x), &c);
        assert!(r.sup_residual <= 1e-10);
    }

    #[test]
    fn residual_shrinks_under_refinement() {
        let c = problem("heat-sin", &Params::new()).unwrap();
        let mut prev = None;
        for (nt, nx) in [(20, 41), (40, 81)] {
            let grid = TimeSpaceGrid::uniform(1.0, nt, nx, -4.0, 4.0).unwrap();
            let f = solve_quasilinear(&c, &grid, &SolverOptions::default()).unwrap();
            let r = pde_residual(&f, &c).sup_residual;
            if let Some(p) = prev {
                let ratio: f64 = p / r;
                assert!(ratio > 1.8 && ratio < 4.5, "ratio {ratio}");
            }
            prev = Some(r);
        }
    }

    #[test]
    fn residual_detects_noise() {
        let c = problem("heat-sin", &Params::new()).unwrap();
        let grid = TimeSpaceGrid::uniform(1.0, 20, 41, -4.0, 4.0).unwrap();
        let f = solve_quasilinear(&c, &grid, &SolverOptions::default()).unwrap();
        let base = pde_residual(&f, &c).sup_residual;
        let mut rng = path_stream(3, 0);
        let noisy: Vec<f64> = f.values().iter().map(|v| v + 0.01 * (rng.random::<f64>() - 0.5)).collect();
        let g = DecouplingField::from_values(grid, noisy, FieldMeta::default());
        assert!(pde_residual(&g, &c).sup_residual >= 10.0 * base);
    }

    #[test]
    fn regularity_of_simple_fields() {
        let grid = TimeSpaceGrid::uniform(1.0, 20, 41, -2.0, 2.0).unwrap();
        let lin = regularity_estimates(&exact_field(&grid, |_, x| x), 0.5, 0.1);
        assert!((lin.sup_du - 1.0).abs() < 1e-12);
        assert!(lin.holder_alpha_du < 1e-9);
        let heat = regularity_estimates(&exact_field(&grid, |t, x| x * x + 1.0 - t), 0.5, 0.1);
        assert!((heat.sup_du - 4.0).abs() < 1e-9);
        assert!((heat.holder_t_half - 1.0).abs() < 1e-9);
        for v in [heat.sup_u, heat.sup_du, heat.holder_t_half, heat.holder_alpha_du] {
            assert!(v.is_finite() && v >= 0.0);
        }
    }
}
