use serde::{Deserialize, Serialize};

use super::TimeSpaceGrid;

/// How the lateral boundary value is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BoundaryMode {
    /// `g(x) + (T−t)·𝒢(x)` where `𝒢 = ½σσᵀ:∂²g + f` at `(T, x, g, ∂g)`,
    /// so the boundary data satisfies the PDE at `t = T`.
    #[default]
    Extended,
    /// `g(x)·I(x) + (T−t)·f(T, x, 0, 0)` with a quintic cutoff `I` equal to
    /// 1 on the inner 90% of the box and 0 on its edge.
    Cutoff,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldMeta {
    /// largest number of Picard (or policy) iterations used in one step
    pub picard_iters_used: usize,
    /// last sup-change of the iteration, maximised over steps
    pub residual_sup: f64,
    pub damping_reduced: bool,
    pub boundary: BoundaryMode,
}

/// Grid samples of `u` and `∂ₓu`, time-major: slice `k` holds `t_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecouplingField {
    pub grid: TimeSpaceGrid,
    u: Vec<f64>,
    du: Vec<f64>,
    pub meta: FieldMeta,
    controls: Option<Vec<f64>>,
}

/// Central difference in the interior, second-order one-sided at the edges.
pub fn gradient(grid: &TimeSpaceGrid, slice: &[f64], out: &mut [f64]) {
    let d = grid.dim();
    for idx in 0..grid.node_count() {
        let ix = grid.unflatten(idx);
        for a in 0..d {
            let s = grid.stride(a);
            let h = grid.dx(a);
            let n = grid.n_x[a];
            let i = ix[a];
            out[idx * d + a] = if i == 0 {
                (-3.0 * slice[idx] + 4.0 * slice[idx + s] - slice[idx + 2 * s]) / (2.0 * h)
            } else if i + 1 == n {
                (3.0 * slice[idx] - 4.0 * slice[idx - s] + slice[idx - 2 * s]) / (2.0 * h)
            } else {
                (slice[idx + s] - slice[idx - s]) / (2.0 * h)
            };
        }
    }
}

/// Central second differences `∂²u` (row-major d×d) at an interior node.
pub fn hessian_at(grid: &TimeSpaceGrid, slice: &[f64], idx: usize, out: &mut [f64]) {
    let d = grid.dim();
    for a in 0..d {
        let sa = grid.stride(a);
        let ha = grid.dx(a);
        out[a * d + a] = (slice[idx + sa] - 2.0 * slice[idx] + slice[idx - sa]) / (ha * ha);
        for b in (a + 1)..d {
            let sb = grid.stride(b);
            let hb = grid.dx(b);
            let m = (slice[idx + sa + sb] - slice[idx + sa - sb] - slice[idx - sa + sb] + slice[idx - sa - sb])
                / (4.0 * ha * hb);
            out[a * d + b] = m;
            out[b * d + a] = m;
        }
    }
}

/// Multilinear interpolation weights along one axis: `(index, weight of index+1)`.
fn locate(lo: f64, h: f64, n: usize, x: f64) -> (usize, f64) {
    let pos = ((x - lo) / h).clamp(0.0, (n - 1) as f64);
    let i = (pos.floor() as usize).min(n - 2);
    (i, pos - i as f64)
}

impl DecouplingField {
    /// Build from `u`; `du` is computed slice by slice.
    pub fn from_values(grid: TimeSpaceGrid, u: Vec<f64>, meta: FieldMeta) -> Self {
        let nodes = grid.node_count();
        let d = grid.dim();
        assert_eq!(u.len(), (grid.n_t + 1) * nodes);
        let mut du = vec![0.0; u.len() * d];
        for k in 0..=grid.n_t {
            gradient(&grid, &u[k * nodes..(k + 1) * nodes], &mut du[k * nodes * d..(k + 1) * nodes * d]);
        }
        DecouplingField { grid, u, du, meta, controls: None }
    }

    /// Build from stored `u` and `du` (e.g. decoded from a file).
    pub fn from_parts(grid: TimeSpaceGrid, u: Vec<f64>, du: Vec<f64>, meta: FieldMeta) -> Self {
        assert_eq!(u.len(), (grid.n_t + 1) * grid.node_count());
        assert_eq!(du.len(), u.len() * grid.dim());
        DecouplingField { grid, u, du, meta, controls: None }
    }

    pub(crate) fn with_controls(mut self, controls: Vec<f64>) -> Self {
        self.controls = Some(controls);
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    pub fn gradients(&self) -> &[f64] {
        &self.du
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.grid.node_count();
        &self.u[k * n..(k + 1) * n]
    }

    pub fn gradient_slice(&self, k: usize) -> &[f64] {
        let n = self.grid.node_count() * self.grid.dim();
        &self.du[k * n..(k + 1) * n]
    }

    /// Argmax control per node and step (HJB solves only).
    pub fn controls(&self) -> Option<&[f64]> {
        self.controls.as_deref()
    }

    pub fn value(&self, k: usize, idx: usize) -> f64 {
        self.u[k * self.grid.node_count() + idx]
    }

    /// Interpolate `u` (and `∂ₓu` into `grad`, if given) at `(t, x)`,
    /// multilinear in `(t, x)`; points outside the box are clamped.
    pub fn interpolate(&self, t: f64, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let g = &self.grid;
        let d = g.dim();
        let nodes = g.node_count();
        let (k, wt) = locate(0.0, g.dt(), g.n_t + 1, t);
        let mut axes = [(0usize, 0.0f64); 2];
        for a in 0..d {
            axes[a] = locate(g.lo[a], g.dx(a), g.n_x[a], x[a]);
        }
        let corners = 1usize << d;
        let mut val = 0.0;
        let mut gr = [0.0f64; 2];
        for (kk, wk) in [(k, 1.0 - wt), (k + 1, wt)] {
            if wk == 0.0 {
                continue;
            }
            for c in 0..corners {
                let mut w = wk;
                let mut ix = [0usize; 2];
                for a in 0..d {
                    let (i, wa) = axes[a];
                    if c >> a & 1 == 1 {
                        ix[a] = i + 1;
                        w *= wa;
                    } else {
                        ix[a] = i;
                        w *= 1.0 - wa;
                    }
                }
                if w == 0.0 {
                    continue;
                }
                let idx = g.flatten(&ix[..d]);
                val += w * self.u[kk * nodes + idx];
                for a in 0..d {
                    gr[a] += w * self.du[(kk * nodes + idx) * d + a];
                }
            }
        }
        if let Some(out) = grad {
            out[..d].copy_from_slice(&gr[..d]);
        }
        val
    }

    /// Interpolated argmax control at `(t, x)`, d = 1.
    pub fn interpolate_control(&self, t: f64, x: f64) -> Option<f64> {
        let c = self.controls.as_ref()?;
        let g = &self.grid;
        let n = g.node_count();
        let (k, wt) = locate(0.0, g.dt(), g.n_t + 1, t);
        let (i, wx) = locate(g.lo[0], g.dx(0), g.n_x[0], x);
        let at = |kk: usize| c[kk * n + i] * (1.0 - wx) + if wx > 0.0 { wx * c[kk * n + i + 1] } else { 0.0 };
        let kk1 = (k + 1).min(g.n_t);
        Some(at(k) * (1.0 - wt) + if wt > 0.0 { wt * at(kk1) } else { 0.0 })
    }

    /// Largest `|∂²u|` over interior nodes, by central second differences.
    pub fn max_second_difference(&self) -> f64 {
        let g = &self.grid;
        let d = g.dim();
        let mut h = vec![0.0; d * d];
        let mut worst = 0.0f64;
        for k in 0..=g.n_t {
            let s = self.slice(k);
            for idx in 0..g.node_count() {
                if g.is_boundary(idx) {
                    continue;
                }
                hessian_at(g, s, idx, &mut h);
                for v in &h {
                    worst = worst.max(v.abs());
                }
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_from(f: impl Fn(f64, f64) -> f64) -> DecouplingField {
        let grid = TimeSpaceGrid::uniform(1.0, 4, 9, -2.0, 2.0).unwrap();
        let mut u = Vec::new();
        for k in 0..=4 {
            for i in 0..9 {
                u.push(f(grid.time(k), grid.coord(0, i)));
            }
        }
        DecouplingField::from_values(grid, u, FieldMeta::default())
    }

    #[test]
    fn gradient_is_exact_on_quadratics() {
        let f = field_from(|_, x| x * x - x);
        let g = f.gradient_slice(2);
        for i in 0..9 {
            let x = f.grid.coord(0, i);
            assert!((g[i] - (2.0 * x - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_is_exact_on_bilinear_functions() {
        let f = field_from(|t, x| 1.0 + 2.0 * t + 3.0 * x + t * x);
        let mut gr = [0.0];
        let v = f.interpolate(0.37, &[0.81], Some(&mut gr));
        assert!((v - (1.0 + 0.74 + 2.43 + 0.37 * 0.81)).abs() < 1e-12);
        assert!((gr[0] - (3.0 + 0.37)).abs() < 1e-12);
        // nodes reproduce stored values bit for bit
        assert_eq!(f.interpolate(0.5, &[1.0], None), f.value(2, 6));
    }
}
