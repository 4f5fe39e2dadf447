use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid on `[0, T] × Π [lo_i, hi_i]`. `n_x` counts nodes per axis,
/// boundary nodes included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSpaceGrid {
    pub t_end: f64,
    pub n_t: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n_x: Vec<usize>,
}

impl TimeSpaceGrid {
    pub const MAX_DIM: usize = 2;

    pub fn new(t_end: f64, n_t: usize, lo: Vec<f64>, hi: Vec<f64>, n_x: Vec<usize>) -> Result<Self> {
        let d = lo.len();
        if d == 0 || hi.len() != d || n_x.len() != d {
            return Err(Error::Config("grid bounds and node counts must share one dimension".into()));
        }
        if d > Self::MAX_DIM {
            return Err(Error::Config(format!("grid dimension {d} exceeds {}", Self::MAX_DIM)));
        }
        if !(t_end > 0.0 && t_end.is_finite()) || n_t == 0 {
            return Err(Error::Config(format!("need T > 0 and n_t ≥ 1 (T={t_end}, n_t={n_t})")));
        }
        for i in 0..d {
            if !(lo[i].is_finite() && hi[i].is_finite() && lo[i] < hi[i]) {
                return Err(Error::Config(format!("axis {i}: need lo < hi (got {}, {})", lo[i], hi[i])));
            }
            if n_x[i] < 3 {
                return Err(Error::Config(format!("axis {i}: need at least 3 nodes, got {}", n_x[i])));
            }
        }
        Ok(TimeSpaceGrid { t_end, n_t, lo, hi, n_x })
    }

    /// One-dimensional grid with `n_t` steps and `n_x` nodes on `[lo, hi]`.
    pub fn uniform(t_end: f64, n_t: usize, n_x: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(t_end, n_t, vec![lo], vec![hi], vec![n_x])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_t as f64
    }

    pub fn dx(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.n_x[axis] - 1) as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_t {
            self.t_end
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn node_count(&self) -> usize {
        self.n_x.iter().product()
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.n_x[axis] {
            self.hi[axis]
        } else {
            self.lo[axis] + i as f64 * self.dx(axis)
        }
    }

    /// Per-axis indices of a flat node index (axis 0 fastest).
    pub fn unflatten(&self, mut idx: usize) -> [usize; 2] {
        let mut out = [0usize; 2];
        for (a, n) in self.n_x.iter().enumerate() {
            out[a] = idx % n;
            idx /= n;
        }
        out
    }

    pub fn flatten(&self, ix: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (a, n) in self.n_x.iter().enumerate() {
            idx += ix[a] * stride;
            stride *= n;
        }
        idx
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.n_x[..axis].iter().product()
    }

    pub fn node_coords(&self, idx: usize, out: &mut [f64]) {
        let ix = self.unflatten(idx);
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.coord(a, ix[a]);
        }
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let ix = self.unflatten(idx);
        (0..self.dim()).any(|a| ix[a] == 0 || ix[a] + 1 == self.n_x[a])
    }

    /// Whether the node lies in the central box of relative half-width `frac`.
    pub fn in_inner(&self, idx: usize, frac: f64) -> bool {
        let ix = self.unflatten(idx);
        (0..self.dim()).all(|a| {
            let c = 0.5 * (self.lo[a] + self.hi[a]);
            let half = 0.5 * (self.hi[a] - self.lo[a]);
            (self.coord(a, ix[a]) - c).abs() <= frac * half + 1e-12 * half
        })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(a, v)| *v >= self.lo[a] && *v <= self.hi[a])
    }
}
