//! Forward path simulation, Feynman–Kac solution construction, Girsanov
//! weights and the orthogonal-martingale residual.

mod barlow;
mod functional;

pub use barlow::{barlow_time_change, BarlowTable, FineSteps};

pub use functional::{
    barlow_series, barlow_sigma, barlow_terms, evaluate, frac, tent, tsirelson_drift, BarlowTerminal, CustomFunctional,
    PathFunctional, PathPrefix, TentMoments, BARLOW_TAIL, TSIRELSON_DEPTH,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_small;
use crate::pde::DecouplingField;
use crate::problem::CoefficientSet;
use crate::rng::{fill_normal, path_stream};
use crate::stats::{correlation, estimate, mean, variance, Estimate};

/// Uniform partition of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {t_end}")));
        }
        if n_steps == 0 {
            return Err(Error::Config("at least one time step is required".into()));
        }
        Ok(TimeGrid { t_end, n_steps })
    }

    /// Grid with step `dt`, which must divide the horizon.
    pub fn with_dt(t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        let n = (t_end / dt).round();
        if n < 1.0 || (n * dt - t_end).abs() > 1e-9 * t_end {
            return Err(Error::Config(format!("dt = {dt} does not divide the horizon {t_end}")));
        }
        TimeGrid::new(t_end, n as usize)
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> usize {
        self.n_steps + 1
    }

    /// Same horizon, half the step.
    pub fn refined(&self) -> Self {
        TimeGrid { t_end: self.t_end, n_steps: 2 * self.n_steps }
    }
}

/// Ensemble of simulated paths `(B, X, Y, Z, N)`. Arrays are path-major:
/// node arrays hold `n_steps + 1` entries per path, increments `n_steps`;
/// vector quantities store `dim` components per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub grid: TimeGrid,
    pub dim: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub increments: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// orthogonal martingale residual
    pub residual: Vec<f64>,
    pub weights: Option<Vec<f64>>,
    pub exit_fraction: f64,
    pub warnings: Vec<String>,
}

/// Bundles warn once more than this fraction of paths hits the field box.
pub const EXIT_WARNING: f64 = 0.10;

impl PathBundle {
    pub fn nodes(&self) -> usize {
        self.grid.n_steps + 1
    }

    pub fn x_at(&self, p: usize, k: usize) -> &[f64] {
        let i = (p * self.nodes() + k) * self.dim;
        &self.x[i..i + self.dim]
    }

    pub fn z_at(&self, p: usize, k: usize) -> &[f64] {
        let i = (p * self.nodes() + k) * self.dim;
        &self.z[i..i + self.dim]
    }

    pub fn y_at(&self, p: usize, k: usize) -> f64 {
        self.y[p * self.nodes() + k]
    }

    pub fn residual_at(&self, p: usize, k: usize) -> f64 {
        self.residual[p * self.nodes() + k]
    }

    /// Brownian increment over `[t_k, t_{k+1}]`.
    pub fn increment(&self, p: usize, k: usize) -> &[f64] {
        let i = (p * self.grid.n_steps + k) * self.dim;
        &self.increments[i..i + self.dim]
    }

    /// All nodes of path `p` (component-interleaved).
    pub fn x_path(&self, p: usize) -> &[f64] {
        let w = self.nodes() * self.dim;
        &self.x[p * w..(p + 1) * w]
    }

    pub fn y_path(&self, p: usize) -> &[f64] {
        let w = self.nodes();
        &self.y[p * w..(p + 1) * w]
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n_paths {
            return Err(Error::Config(format!("{} weights for {} paths", weights.len(), self.n_paths)));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }
}

/// Drift `b(t_k, Θ_k)` along a stored path, including any path-dependent
/// part.
pub(crate) fn drift_on_path(coeffs: &CoefficientSet, bundle: &PathBundle, p: usize, k: usize, out: &mut [f64]) {
    let t = bundle.grid.time(k);
    coeffs.drift(t, bundle.x_at(p, k), bundle.y_at(p, k), bundle.z_at(p, k), out);
    if let Some(functional) = coeffs.path_drift() {
        let prefix = PathPrefix { dt: bundle.grid.dt(), values: &bundle.x_path(p)[..=k] };
        out[0] += evaluate(functional, t, &prefix);
    }
}

fn check_path_drift(coeffs: &CoefficientSet) -> Result<()> {
    if coeffs.path_drift().is_some() {
        if coeffs.dim() != 1 {
            return Err(Error::Config("path-dependent drift is one-dimensional".into()));
        }
        if !coeffs.sigma_deps().is_empty() {
            return Err(Error::Config("path-dependent drift requires a constant sigma".into()));
        }
    }
    Ok(())
}

/// Euler–Maruyama for `dX = b dt + σ dB` with coefficients frozen at the left
/// endpoint. With a field, `(Y, Z) = (u, ∂ₓu)(t, X)` are fed into the
/// coefficients and stored; paths leaving the field's box are absorbed at the
/// boundary.
pub fn euler_forward(
    coeffs: &CoefficientSet,
    field: Option<&DecouplingField>,
    x0: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    simulate_range(coeffs, field, x0, grid, 0, n_paths, seed)
}

/// Paths `first..first + n_paths` of the bundle [`euler_forward`] would
/// produce; lets callers stream large samples in chunks.
pub fn simulate_range(
    coeffs: &CoefficientSet,
    field: Option<&DecouplingField>,
    x0: &[f64],
    grid: &TimeGrid,
    first: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    let d = coeffs.dim();
    if x0.len() != d {
        return Err(Error::Config(format!("x0 has {} components, problem has {d}", x0.len())));
    }
    if n_paths == 0 {
        return Err(Error::Config("n_paths must be positive".into()));
    }
    if coeffs.depends_on_solution() && field.is_none() {
        return Err(Error::Config(format!("problem `{}` reads (y, z); a decoupling field is required", coeffs.name())));
    }
    if let Some(f) = field {
        if f.grid.dim() != d {
            return Err(Error::Config(format!("field is {}-d, problem is {d}-d", f.grid.dim())));
        }
        if !f.grid.contains(x0) {
            return Err(Error::Domain("x0 lies outside the field box".into()));
        }
    }
    check_path_drift(coeffs)?;

    let n = grid.n_steps;
    let nodes = n + 1;
    let dt = grid.dt();
    let mut x = vec![0.0; n_paths * nodes * d];
    let mut y = vec![0.0; n_paths * nodes];
    let mut z = vec![0.0; n_paths * nodes * d];
    let mut increments = vec![0.0; n_paths * n * d];

    let exited: usize = x
        .par_chunks_mut(nodes * d)
        .zip(y.par_chunks_mut(nodes))
        .zip(z.par_chunks_mut(nodes * d))
        .zip(increments.par_chunks_mut(n * d))
        .enumerate()
        .map(|(p, (((xp, yp), zp), bp))| {
            let mut rng = path_stream(seed, first + p);
            fill_normal(&mut rng, dt, bp);
            let mut drift = vec![0.0; d];
            let mut sigma = vec![0.0; d * d];
            let mut xk = x0.to_vec();
            let mut zk = vec![0.0; d];
            let mut absorbed = false;
            xp[..d].copy_from_slice(x0);
            for k in 0..=n {
                let t = grid.time(k);
                let yk = match field {
                    Some(f) => f.interpolate(t, &xk, Some(&mut zk)),
                    None => 0.0,
                };
                yp[k] = yk;
                zp[k * d..(k + 1) * d].copy_from_slice(&zk);
                if k == n {
                    break;
                }
                if !absorbed {
                    coeffs.drift(t, &xk, yk, &zk, &mut drift);
                    if let Some(functional) = coeffs.path_drift() {
                        let prefix = PathPrefix { dt, values: &xp[..=k] };
                        drift[0] += evaluate(functional, t, &prefix);
                    }
                    coeffs.sigma(t, &xk, yk, &zk, &mut sigma);
                    let db = &bp[k * d..(k + 1) * d];
                    for i in 0..d {
                        let noise: f64 = (0..d).map(|j| sigma[i * d + j] * db[j]).sum();
                        xk[i] += drift[i] * dt + noise;
                    }
                    if let Some(f) = field {
                        if !f.grid.contains(&xk) {
                            for (i, v) in xk.iter_mut().enumerate() {
                                *v = v.clamp(f.grid.lo[i], f.grid.hi[i]);
                            }
                            absorbed = true;
                        }
                    }
                }
                xp[(k + 1) * d..(k + 2) * d].copy_from_slice(&xk);
            }
            absorbed as usize
        })
        .sum();

    let exit_fraction = exited as f64 / n_paths as f64;
    let mut warnings = Vec::new();
    if exit_fraction > EXIT_WARNING {
        warnings.push(format!(
            "domain too small: {:.1}% of paths were absorbed at the field boundary",
            100.0 * exit_fraction
        ));
    }
    Ok(PathBundle {
        grid: *grid,
        dim: d,
        n_paths,
        seed,
        increments,
        x,
        y,
        z,
        residual: vec![0.0; n_paths * nodes],
        weights: None,
        exit_fraction,
        warnings,
    })
}

/// Simulate `X` driven by the decoupled coefficients and set
/// `Y = u(t, X)`, `Z = ∂ₓu(t, X)`, `N = 0`.
pub fn build_fbsde_solution(
    field: &DecouplingField,
    coeffs: &CoefficientSet,
    x0: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    euler_forward(coeffs, Some(field), x0, grid, n_paths, seed)
}

/// `exp(Σ αₖ·ΔBₖ − ½ Σ |αₖ|² dt)` per path. `alpha` and `increments` share
/// the `[path][step][component]` layout.
pub fn girsanov_weight(alpha: &[f64], increments: &[f64], dim: usize, grid: &TimeGrid) -> Result<Vec<f64>> {
    let per_path = grid.n_steps * dim;
    if dim == 0 || alpha.len() != increments.len() || !alpha.len().is_multiple_of(per_path) {
        return Err(Error::Config(format!(
            "control ({}) and increments ({}) do not match {} steps of dimension {dim}",
            alpha.len(),
            increments.len(),
            grid.n_steps
        )));
    }
    let dt = grid.dt();
    alpha
        .par_chunks(per_path)
        .zip(increments.par_chunks(per_path))
        .enumerate()
        .map(|(p, (a, b))| {
            let mut stoch = 0.0;
            let mut energy = 0.0;
            for (ai, bi) in a.iter().zip(b) {
                stoch += ai * bi;
                energy += ai * ai;
            }
            let w = (stoch - 0.5 * energy * dt).exp();
            if w.is_finite() {
                Ok(w)
            } else {
                Err(Error::WeightOverflow { path: p })
            }
        })
        .collect()
}

/// `Mˣ_k = X_k − Σ_{j<k} b_j dt`, same layout as `bundle.x`.
pub fn forward_martingale(bundle: &PathBundle, coeffs: &CoefficientSet) -> Vec<f64> {
    let d = bundle.dim;
    let nodes = bundle.nodes();
    let dt = bundle.grid.dt();
    let mut out = vec![0.0; bundle.x.len()];
    out.par_chunks_mut(nodes * d).enumerate().for_each(|(p, mp)| {
        let mut b = vec![0.0; d];
        let mut acc = vec![0.0; d];
        for k in 0..nodes {
            let xk = bundle.x_at(p, k);
            for i in 0..d {
                mp[k * d + i] = xk[i] - acc[i];
            }
            if k + 1 < nodes {
                drift_on_path(coeffs, bundle, p, k, &mut b);
                for i in 0..d {
                    acc[i] += b[i] * dt;
                }
            }
        }
    });
    out
}

/// `Mʸ_k = Y_k + Σ_{j<k} (f_j − Z_j·b_j) dt`, same layout as `bundle.y`.
pub fn backward_martingale(bundle: &PathBundle, coeffs: &CoefficientSet) -> Vec<f64> {
    let d = bundle.dim;
    let nodes = bundle.nodes();
    let dt = bundle.grid.dt();
    let mut out = vec![0.0; bundle.y.len()];
    out.par_chunks_mut(nodes).enumerate().for_each(|(p, mp)| {
        let mut b = vec![0.0; d];
        let mut acc = 0.0;
        for k in 0..nodes {
            mp[k] = bundle.y_at(p, k) + acc;
            if k + 1 < nodes {
                let t = bundle.grid.time(k);
                let (xk, yk, zk) = (bundle.x_at(p, k), bundle.y_at(p, k), bundle.z_at(p, k));
                drift_on_path(coeffs, bundle, p, k, &mut b);
                let zb: f64 = zk.iter().zip(&b).map(|(a, c)| a * c).sum();
                acc += (coeffs.driver(t, xk, yk, zk) - zb) * dt;
            }
        }
    });
    out
}

/// Store `N_k = Y₀ − Mʸ_k + Σ_{j<k} Z_j·ΔMˣ_j` in `bundle.residual`.
pub fn residual_orthogonal_martingale(bundle: &mut PathBundle, coeffs: &CoefficientSet) {
    let mx = forward_martingale(bundle, coeffs);
    let my = backward_martingale(bundle, coeffs);
    let d = bundle.dim;
    let nodes = bundle.nodes();
    let mut residual = vec![0.0; bundle.y.len()];
    {
        let b = &*bundle;
        residual.par_chunks_mut(nodes).enumerate().for_each(|(p, np)| {
            let y0 = b.y_at(p, 0);
            let mut stoch = 0.0;
            for k in 0..nodes {
                np[k] = y0 - my[p * nodes + k] + stoch;
                if k + 1 < nodes {
                    let z = b.z_at(p, k);
                    for i in 0..d {
                        let dm = mx[(p * nodes + k + 1) * d + i] - mx[(p * nodes + k) * d + i];
                        stoch += z[i] * dm;
                    }
                }
            }
        });
    }
    bundle.residual = residual;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrownianStats {
    /// largest per-step |mean| in standard errors
    pub max_mean_z: f64,
    /// largest per-step |sample variance / dt − 1|
    pub worst_variance_ratio: f64,
    /// pooled correlation of consecutive increments
    pub lag1_autocorrelation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredBrownian {
    /// same layout as `PathBundle::increments`
    pub increments: Vec<f64>,
    pub stats: BrownianStats,
}

/// `ΔB_k = σ(t_k, Θ_k)⁻¹ ΔMˣ_k` with summary Brownianity statistics.
pub fn recover_brownian(bundle: &PathBundle, coeffs: &CoefficientSet) -> Result<RecoveredBrownian> {
    let d = bundle.dim;
    let n = bundle.grid.n_steps;
    let mx = forward_martingale(bundle, coeffs);
    let nodes = bundle.nodes();
    let mut increments = vec![0.0; bundle.increments.len()];
    increments.par_chunks_mut(n * d).enumerate().try_for_each(|(p, out)| -> Result<()> {
        let mut sigma = vec![0.0; d * d];
        let mut dm = vec![0.0; d];
        for k in 0..n {
            let t = bundle.grid.time(k);
            coeffs.sigma(t, bundle.x_at(p, k), bundle.y_at(p, k), bundle.z_at(p, k), &mut sigma);
            for i in 0..d {
                dm[i] = mx[(p * nodes + k + 1) * d + i] - mx[(p * nodes + k) * d + i];
            }
            let solved = if d == 1 {
                (sigma[0] != 0.0 && sigma[0].is_finite()).then(|| vec![dm[0] / sigma[0]])
            } else {
                solve_small(&sigma, d, &dm)
            };
            match solved {
                Some(w) => out[k * d..(k + 1) * d].copy_from_slice(&w),
                None => {
                    return Err(Error::Ellipticity(format!("singular sigma on path {p} at step {k}")));
                }
            }
        }
        Ok(())
    })?;
    let stats = brownian_stats(&increments, bundle.n_paths, n, d, bundle.grid.dt());
    Ok(RecoveredBrownian { increments, stats })
}

/// Per-step mean and variance tests and the pooled lag-1 correlation.
pub fn brownian_stats(increments: &[f64], n_paths: usize, n_steps: usize, dim: usize, dt: f64) -> BrownianStats {
    let mut max_mean_z = 0.0f64;
    let mut worst_ratio = 0.0f64;
    let mut column = vec![0.0; n_paths];
    for k in 0..n_steps {
        for i in 0..dim {
            for (p, c) in column.iter_mut().enumerate() {
                *c = increments[(p * n_steps + k) * dim + i];
            }
            max_mean_z = max_mean_z.max(estimate(&column).z_score().abs());
            worst_ratio = worst_ratio.max((variance(&column) / dt - 1.0).abs());
        }
    }
    let mut lead = Vec::with_capacity(n_paths * n_steps.saturating_sub(1) * dim);
    let mut lag = Vec::with_capacity(lead.capacity());
    for p in 0..n_paths {
        for k in 0..n_steps.saturating_sub(1) {
            for i in 0..dim {
                lead.push(increments[(p * n_steps + k) * dim + i]);
                lag.push(increments[(p * n_steps + k + 1) * dim + i]);
            }
        }
    }
    let lag1 = if lead.len() > 1 { correlation(&lead, &lag) } else { 0.0 };
    BrownianStats { max_mean_z, worst_variance_ratio: worst_ratio, lag1_autocorrelation: lag1 }
}

/// Discrete backward recursion `Y_k = Y_{k+1} + f(t_k, X_k, Y_{k+1}, Z_k) dt
/// − Z_k·ΔX_k` from `Y_N = g(X_N)`, with `Z` taken from the bundle.
pub fn backward_recursion(bundle: &PathBundle, coeffs: &CoefficientSet) -> Vec<f64> {
    let d = bundle.dim;
    let nodes = bundle.nodes();
    let dt = bundle.grid.dt();
    let mut y = vec![0.0; bundle.y.len()];
    y.par_chunks_mut(nodes).enumerate().for_each(|(p, yp)| {
        let n = nodes - 1;
        yp[n] = coeffs.terminal(bundle.x_at(p, n));
        for k in (0..n).rev() {
            let t = bundle.grid.time(k);
            let (xk, xn, zk) = (bundle.x_at(p, k), bundle.x_at(p, k + 1), bundle.z_at(p, k));
            let zdx: f64 = (0..d).map(|i| zk[i] * (xn[i] - xk[i])).sum();
            yp[k] = yp[k + 1] + coeffs.driver(t, xk, yp[k + 1], zk) * dt - zdx;
        }
    });
    y
}

/// Itô isometry gap per path: `|X_T − X_0|² − Σ tr(σσᵀ) dt`. Mean zero for
/// driftless dynamics.
pub fn isometry_gap(bundle: &PathBundle, coeffs: &CoefficientSet) -> Estimate {
    let d = bundle.dim;
    let n = bundle.grid.n_steps;
    let dt = bundle.grid.dt();
    let gaps: Vec<f64> = (0..bundle.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut sigma = vec![0.0; d * d];
            let mut qv = 0.0;
            for k in 0..n {
                let t = bundle.grid.time(k);
                coeffs.sigma(t, bundle.x_at(p, k), bundle.y_at(p, k), bundle.z_at(p, k), &mut sigma);
                qv += sigma.iter().map(|s| s * s).sum::<f64>() * dt;
            }
            let (x0, xt) = (bundle.x_at(p, 0), bundle.x_at(p, n));
            let sq: f64 = x0.iter().zip(xt).map(|(a, b)| (b - a) * (b - a)).sum();
            sq - qv
        })
        .collect();
    estimate(&gaps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsirelsonStats {
    /// mean of `K(t_k, X)` over steps with `t_k ≥ t_min`, per path then across paths
    pub mean_drift: Estimate,
    /// real and imaginary parts of the pooled `E[exp(2πiK)]`
    pub fourier_re: Estimate,
    pub fourier_im: Estimate,
    pub steps_used: usize,
}

/// Drift statistics of a one-dimensional bundle under a path functional.
pub fn tsirelson_statistics(bundle: &PathBundle, functional: &PathFunctional, t_min: f64) -> Result<TsirelsonStats> {
    if bundle.dim != 1 {
        return Err(Error::Config("Tsirelson statistics need a one-dimensional bundle".into()));
    }
    let n = bundle.grid.n_steps;
    let dt = bundle.grid.dt();
    let steps: Vec<usize> = (0..n).filter(|&k| bundle.grid.time(k) >= t_min && bundle.grid.time(k) > 0.0).collect();
    if steps.is_empty() {
        return Err(Error::Domain(format!("no steps at or after t = {t_min}")));
    }
    let per_path: Vec<(f64, f64, f64)> = (0..bundle.n_paths)
        .into_par_iter()
        .map(|p| {
            let path = bundle.x_path(p);
            let (mut k_sum, mut c, mut s) = (0.0, 0.0, 0.0);
            for &k in &steps {
                let prefix = PathPrefix { dt, values: &path[..=k] };
                let v = evaluate(functional, bundle.grid.time(k), &prefix);
                k_sum += v;
                let angle = std::f64::consts::TAU * v;
                c += angle.cos();
                s += angle.sin();
            }
            let m = steps.len() as f64;
            (k_sum / m, c / m, s / m)
        })
        .collect();
    let col = |f: fn(&(f64, f64, f64)) -> f64| -> Vec<f64> { per_path.iter().map(f).collect() };
    Ok(TsirelsonStats {
        mean_drift: estimate(&col(|v| v.0)),
        fourier_re: estimate(&col(|v| v.1)),
        fourier_im: estimate(&col(|v| v.2)),
        steps_used: steps.len(),
    })
}

/// Mean of `X_T` components across paths (unweighted).
pub fn terminal_mean(bundle: &PathBundle) -> Vec<f64> {
    let n = bundle.grid.n_steps;
    (0..bundle.dim).map(|i| mean(&(0..bundle.n_paths).map(|p| bundle.x_at(p, n)[i]).collect::<Vec<_>>())).collect()
}
