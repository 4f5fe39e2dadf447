use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{CheckDetail, CheckReport};
use crate::error::{Error, Result};
use crate::pde::DecouplingField;
use crate::problem::CoefficientSet;
use crate::simulate::{backward_martingale, forward_martingale, simulate_range, PathBundle, TimeGrid};
use crate::stats::{bonferroni_threshold, ols, weighted_estimate};

pub const DEFAULT_THRESHOLD: f64 = 5.0;
pub const MIN_PATHS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MartingaleProcess {
    /// `Mˣ = X − ∫b`
    Forward,
    /// `Mʸ = Y + ∫f − ∫Z·b`
    Backward,
}

fn require_paths(bundle: &PathBundle) -> Result<()> {
    if bundle.n_paths < MIN_PATHS {
        return Err(Error::InsufficientSample { got: bundle.n_paths, need: MIN_PATHS });
    }
    Ok(())
}

fn suffix(i: usize, comps: usize) -> String {
    if comps == 1 {
        String::new()
    } else {
        format!("[{i}]")
    }
}

/// Corruption fixture: add `rate·t_k` to `X_k` (every component) or to `Y_k`,
/// leaving everything else untouched, so the chosen martingale gains a drift
/// the checks must flag.
pub fn inject_drift(bundle: &mut PathBundle, which: MartingaleProcess, rate: f64) {
    let nodes = bundle.nodes();
    let grid = bundle.grid;
    let (values, width) = match which {
        MartingaleProcess::Forward => (&mut bundle.x, bundle.dim),
        MartingaleProcess::Backward => (&mut bundle.y, 1),
    };
    values.par_chunks_mut(nodes * width).for_each(|path| {
        for (k, node) in path.chunks_mut(width).enumerate() {
            node.iter_mut().for_each(|v| *v += rate * grid.time(k));
        }
    });
}

/// Martingale test for `Mˣ` or `Mʸ`: the mean of the total increment, and per
/// step the increment mean and its regression slopes on `(X_k, Y_k)`. The
/// per-step family shares a Bonferroni-adjusted threshold. Weights, when
/// present, multiply every increment.
pub fn check_martingale(
    bundle: &PathBundle,
    coeffs: &CoefficientSet,
    which: MartingaleProcess,
    threshold: f64,
) -> Result<CheckReport> {
    require_paths(bundle)?;
    let d = bundle.dim;
    let (m, comps, name) = match which {
        MartingaleProcess::Forward => (forward_martingale(bundle, coeffs), d, "martingale MX"),
        MartingaleProcess::Backward => (backward_martingale(bundle, coeffs), 1, "martingale MY"),
    };
    let nodes = bundle.nodes();
    let n = bundle.grid.n_steps;
    let paths = bundle.n_paths;
    let w = bundle.weights();
    let at = |p: usize, k: usize, i: usize| m[(p * nodes + k) * comps + i];

    let mut details = Vec::new();
    for i in 0..comps {
        let total: Vec<f64> = (0..paths).map(|p| at(p, n, i) - at(p, 0, i)).collect();
        let e = weighted_estimate(&total, w);
        details.push(CheckDetail::z(format!("terminal{}", suffix(i, comps)), e.mean, e.std_err, threshold));
    }

    let family = n * comps * (2 + d);
    let step_threshold = bonferroni_threshold(threshold, family);
    let per_step: Vec<Vec<CheckDetail>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut out = Vec::new();
            let xs: Vec<Vec<f64>> = (0..d).map(|j| (0..paths).map(|p| bundle.x_at(p, k)[j]).collect()).collect();
            let ys: Vec<f64> = (0..paths).map(|p| bundle.y_at(p, k)).collect();
            let mut regressors: Vec<&[f64]> = xs.iter().map(|c| c.as_slice()).collect();
            regressors.push(&ys);
            for i in 0..comps {
                let inc: Vec<f64> = (0..paths)
                    .map(|p| {
                        let v = at(p, k + 1, i) - at(p, k, i);
                        w.map_or(v, |w| v * w[p])
                    })
                    .collect();
                let e = weighted_estimate(&inc, None);
                let sfx = suffix(i, comps);
                out.push(CheckDetail::z(format!("step {k} mean{sfx}"), e.mean, e.std_err, step_threshold));
                let fit = ols(&inc, &regressors);
                for (j, slot) in fit.iter().enumerate().skip(1) {
                    if let Some((coef, se)) = slot {
                        let reg = if j <= d { format!("x{}", j - 1) } else { "y".to_string() };
                        out.push(CheckDetail::z(format!("step {k} slope {reg}{sfx}"), *coef, *se, step_threshold));
                    }
                }
            }
            out
        })
        .collect();
    details.extend(per_step.into_iter().flatten());
    Ok(CheckReport::from_details(name, details).with_metric("step_threshold", step_threshold))
}

/// Realised `Σ ΔMˣ(ΔMˣ)ᵀ` against `Σ σσᵀ dt`, path by path, per component
/// pair.
pub fn check_quadratic_variation(bundle: &PathBundle, coeffs: &CoefficientSet, threshold: f64) -> Result<CheckReport> {
    require_paths(bundle)?;
    let d = bundle.dim;
    let nodes = bundle.nodes();
    let n = bundle.grid.n_steps;
    let dt = bundle.grid.dt();
    let mx = forward_martingale(bundle, coeffs);
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
    let np = pairs.len();
    // per path: realised then model, per pair
    let per_path: Vec<f64> = (0..bundle.n_paths)
        .into_par_iter()
        .flat_map_iter(|p| {
            let mut sigma = vec![0.0; d * d];
            let mut realised = vec![0.0; np];
            let mut model = vec![0.0; np];
            let mut dm = vec![0.0; d];
            for k in 0..n {
                for i in 0..d {
                    dm[i] = mx[(p * nodes + k + 1) * d + i] - mx[(p * nodes + k) * d + i];
                }
                let t = bundle.grid.time(k);
                coeffs.sigma(t, bundle.x_at(p, k), bundle.y_at(p, k), bundle.z_at(p, k), &mut sigma);
                for (q, &(i, j)) in pairs.iter().enumerate() {
                    realised[q] += dm[i] * dm[j];
                    let a: f64 = (0..d).map(|m| sigma[i * d + m] * sigma[j * d + m]).sum();
                    model[q] += a * dt;
                }
            }
            realised.into_iter().chain(model)
        })
        .collect();
    let thr = bonferroni_threshold(threshold, np);
    let w = bundle.weights();
    let mut report_details = Vec::new();
    let mut metrics = Vec::new();
    for (q, &(i, j)) in pairs.iter().enumerate() {
        let gap: Vec<f64> =
            (0..bundle.n_paths).map(|p| per_path[p * 2 * np + q] - per_path[p * 2 * np + np + q]).collect();
        let e = weighted_estimate(&gap, w);
        let label = if d == 1 { "qv gap".to_string() } else { format!("qv gap[{i},{j}]") };
        report_details.push(CheckDetail::z(label, e.mean, e.std_err, thr));
        let realised: Vec<f64> = (0..bundle.n_paths).map(|p| per_path[p * 2 * np + q]).collect();
        let model: Vec<f64> = (0..bundle.n_paths).map(|p| per_path[p * 2 * np + np + q]).collect();
        metrics.push((format!("realised[{i},{j}]"), weighted_estimate(&realised, w).mean));
        metrics.push((format!("model[{i},{j}]"), weighted_estimate(&model, w).mean));
    }
    let mut report = CheckReport::from_details("quadratic variation", report_details);
    for (k, v) in metrics {
        report = report.with_metric(k, v);
    }
    Ok(report)
}

/// Per-path, per-component gap `Σ ΔY ΔXᵢ − Σ (Z·ΔX) ΔXᵢ`: the discrete
/// cross-variation of `Y` and `X` against `∫Z d⟨X⟩` with `⟨X⟩` taken from the
/// same increments.
pub fn cross_variation_gaps(bundle: &PathBundle) -> Vec<f64> {
    let d = bundle.dim;
    let n = bundle.grid.n_steps;
    let mut out = vec![0.0; bundle.n_paths * d];
    out.par_chunks_mut(d).enumerate().for_each(|(p, gp)| {
        for k in 0..n {
            let (xk, xn) = (bundle.x_at(p, k), bundle.x_at(p, k + 1));
            let dy = bundle.y_at(p, k + 1) - bundle.y_at(p, k);
            let zdx: f64 = bundle.z_at(p, k).iter().zip(xk.iter().zip(xn)).map(|(z, (a, b))| z * (b - a)).sum();
            for i in 0..d {
                gp[i] += (dy - zdx) * (xn[i] - xk[i]);
            }
        }
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementLevel {
    pub dt: f64,
    pub mean_abs_gap: f64,
    /// `E|gap|²`, summed over components
    pub mean_square_gap: f64,
}

const REFINEMENT_CHUNK: usize = 10_000;

/// Cross-variation gaps of freshly simulated solutions at `dt, dt/2, …`
/// (`levels` grids). Paths are simulated in chunks to bound memory.
pub fn cross_variation_refinement(
    coeffs: &CoefficientSet,
    field: &DecouplingField,
    x0: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    levels: usize,
) -> Result<Vec<RefinementLevel>> {
    let mut out = Vec::with_capacity(levels);
    let mut g = *grid;
    for _ in 0..levels {
        let (mut abs_sum, mut sq_sum) = (0.0, 0.0);
        let mut first = 0;
        while first < n_paths {
            let count = REFINEMENT_CHUNK.min(n_paths - first);
            let bundle = simulate_range(coeffs, Some(field), x0, &g, first, count, seed)?;
            let gaps = cross_variation_gaps(&bundle);
            for gp in gaps.chunks(bundle.dim) {
                abs_sum += gp.iter().map(|v| v * v).sum::<f64>().sqrt();
                sq_sum += gp.iter().map(|v| v * v).sum::<f64>();
            }
            first += count;
        }
        out.push(RefinementLevel {
            dt: g.dt(),
            mean_abs_gap: abs_sum / n_paths as f64,
            mean_square_gap: sq_sum / n_paths as f64,
        });
        g = g.refined();
    }
    Ok(out)
}

/// Required shrink factor of the mean-square gap per halving of `dt`.
pub const REFINEMENT_RATIO: f64 = 1.5;
/// Mean-square gaps below this count as exact.
const EXACT_GAP: f64 = 1e-24;

/// Mean-zero test of the cross-variation gap on the bundle, plus a
/// refinement check: a fresh simulation at `dt/2` must shrink the
/// mean-square gap by at least [`REFINEMENT_RATIO`].
pub fn check_cross_variation(
    bundle: &PathBundle,
    coeffs: &CoefficientSet,
    field: Option<&DecouplingField>,
    threshold: f64,
) -> Result<CheckReport> {
    let field = field.ok_or_else(|| Error::Config("cross-variation check needs a decoupling field".into()))?;
    require_paths(bundle)?;
    let d = bundle.dim;
    let gaps = cross_variation_gaps(bundle);
    let thr = bonferroni_threshold(threshold, d);
    let w = bundle.weights();
    let mut details = Vec::new();
    for i in 0..d {
        let col: Vec<f64> = gaps.iter().skip(i).step_by(d).copied().collect();
        let e = weighted_estimate(&col, w);
        details.push(CheckDetail::z(format!("gap{}", suffix(i, d)), e.mean, e.std_err, thr));
    }
    let paths = bundle.n_paths as f64;
    let mean_abs: f64 = gaps.chunks(d).map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>() / paths;
    let mean_sq: f64 = gaps.iter().map(|v| v * v).sum::<f64>() / paths;
    let fine = cross_variation_refinement(
        coeffs,
        field,
        bundle.x_at(0, 0),
        &bundle.grid.refined(),
        bundle.n_paths,
        bundle.seed,
        1,
    )?[0];
    if mean_sq > EXACT_GAP {
        details.push(CheckDetail::at_least("refinement ratio", mean_sq / fine.mean_square_gap, REFINEMENT_RATIO));
    } else {
        details.push(CheckDetail::at_most("exact gap", mean_sq, EXACT_GAP));
    }
    Ok(CheckReport::from_details("cross variation", details)
        .with_metric("mean_abs_gap", mean_abs)
        .with_metric("mean_square_gap", mean_sq)
        .with_metric("refined_mean_square_gap", fine.mean_square_gap))
}

/// Sup and mean of `|Y − u(t, X)|` and `|Z − ∂ₓu(t, X)|` over paths and
/// nodes; passes when both sups are at most `tol`.
pub fn feynman_kac_residual(bundle: &PathBundle, field: &DecouplingField, tol: f64) -> Result<CheckReport> {
    let d = bundle.dim;
    if field.grid.dim() != d {
        return Err(Error::Config(format!("field is {}-d, bundle is {d}-d", field.grid.dim())));
    }
    let nodes = bundle.nodes();
    let per_path: Vec<[f64; 4]> = (0..bundle.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut grad = vec![0.0; d];
            let mut acc = [0.0f64; 4];
            for k in 0..nodes {
                let t = bundle.grid.time(k);
                let u = field.interpolate(t, bundle.x_at(p, k), Some(&mut grad));
                let ey = (bundle.y_at(p, k) - u).abs();
                let ez = bundle.z_at(p, k).iter().zip(&grad).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                acc[0] = acc[0].max(ey);
                acc[1] = acc[1].max(ez);
                acc[2] += ey;
                acc[3] += ez;
            }
            acc
        })
        .collect();
    let count = (bundle.n_paths * nodes) as f64;
    let sup_y = per_path.iter().map(|a| a[0]).fold(0.0f64, f64::max);
    let sup_z = per_path.iter().map(|a| a[1]).fold(0.0f64, f64::max);
    let mean_y = per_path.iter().map(|a| a[2]).sum::<f64>() / count;
    let mean_z = per_path.iter().map(|a| a[3]).sum::<f64>() / count;
    Ok(CheckReport::from_details(
        "feynman-kac residual",
        vec![CheckDetail::at_most("sup |Y - u|", sup_y, tol), CheckDetail::at_most("sup |Z - du|", sup_z, tol)],
    )
    .with_metric("mean_y", mean_y)
    .with_metric("mean_z", mean_z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub p: f64,
    /// `E[sup_k |X_k|ᵖ]`
    pub sup_x: f64,
    pub sup_y: f64,
    pub sup_residual: f64,
    /// `E[(Σ |Z_k|² dt)^{p/2}]`
    pub z_energy: f64,
}

/// Sample moments bounding the integrability of a bundle.
pub fn moment_bounds(bundle: &PathBundle, p: f64) -> Result<MomentReport> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Domain(format!("moment order must be ≥ 1, got {p}")));
    }
    let nodes = bundle.nodes();
    let dt = bundle.grid.dt();
    let per_path: Vec<[f64; 4]> = (0..bundle.n_paths)
        .into_par_iter()
        .map(|q| {
            let (mut sx, mut sy, mut sn, mut energy) = (0.0f64, 0.0f64, 0.0f64, 0.0);
            for k in 0..nodes {
                let x = bundle.x_at(q, k).iter().map(|v| v * v).sum::<f64>().sqrt();
                sx = sx.max(x);
                sy = sy.max(bundle.y_at(q, k).abs());
                sn = sn.max(bundle.residual_at(q, k).abs());
                if k + 1 < nodes {
                    energy += bundle.z_at(q, k).iter().map(|v| v * v).sum::<f64>() * dt;
                }
            }
            [sx.powf(p), sy.powf(p), sn.powf(p), energy.powf(p / 2.0)]
        })
        .collect();
    let m = bundle.n_paths as f64;
    let avg = |i: usize| per_path.iter().map(|a| a[i]).sum::<f64>() / m;
    Ok(MomentReport { p, sup_x: avg(0), sup_y: avg(1), sup_residual: avg(2), z_energy: avg(3) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::{solve_quasilinear, SolverOptions, TimeSpaceGrid};
    use crate::problem::{problem, Params};
    use crate::simulate::{build_fbsde_solution, euler_forward};

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    #[test]
    fn too_few_paths() {
        let c = problem("constant", &Params::new()).unwrap();
        let b = euler_forward(&c, None, &[0.0], &grid(4), 50, 1).unwrap();
        assert!(matches!(
            check_martingale(&b, &c, MartingaleProcess::Forward, 5.0),
            Err(Error::InsufficientSample { got: 50, need: 100 })
        ));
    }

    #[test]
    fn brownian_forward_martingale_passes() {
        let c = problem("constant", &Params::new()).unwrap();
        let b = euler_forward(&c, None, &[0.0], &grid(20), 5000, 2).unwrap();
        let r = check_martingale(&b, &c, MartingaleProcess::Forward, 5.0).unwrap();
        assert!(r.pass, "{r}");
        let qv = check_quadratic_variation(&b, &c, 5.0).unwrap();
        assert!(qv.pass, "{qv}");
    }

    #[test]
    fn sigma_mismatch_fails_quadratic_variation() {
        let c = problem("constant", &Params::new()).unwrap();
        let b = euler_forward(&c, None, &[0.0], &grid(20), 2000, 2).unwrap();
        let wrong = c.clone().with_scalar_sigma(crate::problem::Deps::NONE, |_, _, _, _| 2.0);
        assert!(!check_quadratic_variation(&b, &wrong, 5.0).unwrap().pass);
    }

    #[test]
    fn drift_injection_is_detected() {
        let c = problem("heat-x2", &Params::new()).unwrap();
        let g = TimeSpaceGrid::uniform(1.0, 50, 201, -6.0, 6.0).unwrap();
        let field = solve_quasilinear(&c, &g, &SolverOptions::default()).unwrap();
        let mut b = build_fbsde_solution(&field, &c, &[0.0], &grid(50), 20_000, 5).unwrap();
        let clean = check_martingale(&b, &c, MartingaleProcess::Backward, 5.0).unwrap();
        assert!(clean.pass, "{clean}");
        let mut shifted = b.clone();
        inject_drift(&mut shifted, MartingaleProcess::Forward, 0.5);
        let r = check_martingale(&shifted, &c, MartingaleProcess::Forward, 5.0).unwrap();
        assert!(!r.pass && r.z_score().abs() >= 10.0, "{r}");
        inject_drift(&mut b, MartingaleProcess::Backward, 0.5);
        let r = check_martingale(&b, &c, MartingaleProcess::Backward, 5.0).unwrap();
        assert!(!r.pass);
        assert!(r.z_score().abs() >= 10.0, "{r}");
    }

    #[test]
    fn example_cross_variation_is_exact() {
        let c = problem("example-2.1", &Params::new()).unwrap();
        let g = TimeSpaceGrid::uniform(1.0, 20, 81, -6.0, 6.0).unwrap();
        let field = solve_quasilinear(&c, &g, &SolverOptions::default()).unwrap();
        let b = build_fbsde_solution(&field, &c, &[0.0], &grid(20), 500, 5).unwrap();
        let gaps = cross_variation_gaps(&b);
        assert!(gaps.iter().all(|v| v.abs() < 1e-12));
        assert!(check_cross_variation(&b, &c, None, 5.0).is_err());
        let r = check_cross_variation(&b, &c, Some(&field), 5.0).unwrap();
        assert!(r.pass, "{r}");
        let fk = feynman_kac_residual(&b, &field, 1e-12).unwrap();
        assert!(fk.pass, "{fk}");
    }

    #[test]
    fn corrupted_z_shifts_cross_variation() {
        let c = problem("heat-x2", &Params::new()).unwrap();
        let g = TimeSpaceGrid::uniform(1.0, 50, 201, -6.0, 6.0).unwrap();
        let field = solve_quasilinear(&c, &g, &SolverOptions::default()).unwrap();
        let mut b = build_fbsde_solution(&field, &c, &[0.0], &grid(50), 4000, 6).unwrap();
        for z in b.z.iter_mut() {
            *z += 0.1;
        }
        let gaps = cross_variation_gaps(&b);
        let e = crate::stats::estimate(&gaps);
        // ⟨X⟩_T = 1 here
        assert!(-e.mean >= 0.1 - 5.0 * e.std_err);
        assert!(!check_cross_variation(&b, &c, Some(&field), 5.0).unwrap().pass);
    }

    #[test]
    fn heat_cross_variation_refines() {
        let c = problem("heat-x2", &Params::new()).unwrap();
        let g = TimeSpaceGrid::uniform(1.0, 200, 401, -6.0, 6.0).unwrap();
        let field = solve_quasilinear(&c, &g, &SolverOptions::default()).unwrap();
        let levels = cross_variation_refinement(&c, &field, &[0.0], &grid(25), 4000, 3, 3).unwrap();
        for w in levels.windows(2) {
            assert!(w[0].mean_square_gap / w[1].mean_square_gap >= 1.5, "{levels:?}");
            assert!(w[1].mean_abs_gap < w[0].mean_abs_gap);
        }
    }

    #[test]
    fn constant_y_moments() {
        let c = problem("constant", &Params::new()).unwrap();
        let mut b = euler_forward(&c, None, &[0.0], &grid(10), 100, 1).unwrap();
        for y in b.y.iter_mut() {
            *y = -2.0;
        }
        let m = moment_bounds(&b, 3.0).unwrap();
        assert_eq!(m.sup_y, 8.0);
        assert!(moment_bounds(&b, 0.5).is_err());
    }
}
