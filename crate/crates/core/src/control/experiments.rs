use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hamiltonian::{f_star, hamiltonian_spec, HamiltonianSpec};
use crate::error::{Error, Result};
use crate::mgcheck::{check_martingale, CheckDetail, CheckReport, MartingaleProcess};
use crate::pde::{solve_hjb, DecouplingField, FieldMeta, HjbOptions, TimeSpaceGrid};
use crate::problem::{problem, CoefficientSet, Deps, Params};
use crate::rng::{fill_normal, path_stream};
use crate::simulate::{
    barlow_series, barlow_terms, barlow_time_change, build_fbsde_solution, drift_on_path, evaluate, tent,
    BarlowTerminal, FineSteps, PathFunctional, PathPrefix, TimeGrid,
};
use crate::stats::{estimate, Estimate};

/// Reference drift `K` of the drift-control problem `f = −½|α − K|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ReferenceDrift {
    /// Tsirelson's functional on the dyadic partition of the given depth
    Tsirelson {
        depth: usize,
    },
    Constant(f64),
}

/// Controls for the drift problem, as functionals of the observed path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ControlPolicy {
    Zero,
    /// `α = K(t, path)`
    Kernel,
    /// `n` equal blocks; each block uses the average of `K` over the previous
    /// one, the first block uses 0
    Blocks(usize),
    Constant(f64),
}

/// Drift-control setting: `b = α`, `σ = 1`, `f = −½|α − K|²`, `g = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSetting {
    pub t_end: f64,
    pub n_steps: usize,
    pub kernel: ReferenceDrift,
}

struct DriftRun {
    grid: TimeGrid,
    kernel: ReferenceDrift,
    functional: Option<PathFunctional>,
    policy: ControlPolicy,
    block: usize,
}

/// One simulated path: running cost, `Σ α ΔB` and `Σ α² dt`, and `X_T`.
struct PathOutcome {
    cost: f64,
    stochastic: f64,
    energy: f64,
    terminal: f64,
}

impl DriftRun {
    fn new(setting: &DriftSetting, policy: ControlPolicy) -> Result<Self> {
        let grid = TimeGrid::new(setting.t_end, setting.n_steps)?;
        let functional = match setting.kernel {
            ReferenceDrift::Tsirelson { depth } => {
                if depth == 0 {
                    return Err(Error::Config("Tsirelson depth must be positive".into()));
                }
                Some(PathFunctional::tsirelson(setting.t_end, depth))
            }
            ReferenceDrift::Constant(_) => None,
        };
        let block = match policy {
            ControlPolicy::Blocks(n) => {
                if n == 0 || !setting.n_steps.is_multiple_of(n) {
                    return Err(Error::Config(format!("{n} blocks do not divide {} steps", setting.n_steps)));
                }
                setting.n_steps / n
            }
            _ => setting.n_steps,
        };
        Ok(DriftRun { grid, kernel: setting.kernel, functional, policy, block })
    }

    /// `strong`: `X = ∫α + B`; otherwise `X = B` and the control only enters
    /// the Girsanov weight.
    fn run(&self, db: &[f64], strong: bool, x: &mut [f64], k_vals: &mut [f64]) -> PathOutcome {
        let dt = self.grid.dt();
        let n = self.grid.n_steps;
        x[0] = 0.0;
        let (mut cost, mut stochastic, mut energy) = (0.0, 0.0, 0.0);
        let mut block_control = 0.0;
        for k in 0..n {
            let t = self.grid.time(k);
            let kernel = match (&self.functional, self.kernel) {
                (Some(f), _) => evaluate(f, t, &PathPrefix { dt, values: &x[..=k] }),
                (None, ReferenceDrift::Constant(c)) => c,
                (None, ReferenceDrift::Tsirelson { .. }) => unreachable!(),
            };
            k_vals[k] = kernel;
            let alpha = match self.policy {
                ControlPolicy::Zero => 0.0,
                ControlPolicy::Kernel => kernel,
                ControlPolicy::Constant(c) => c,
                ControlPolicy::Blocks(_) => {
                    if k % self.block == 0 && k > 0 {
                        let prev = &k_vals[k - self.block..k];
                        block_control = prev.iter().sum::<f64>() / self.block as f64;
                    }
                    block_control
                }
            };
            cost -= 0.5 * (alpha - kernel) * (alpha - kernel) * dt;
            stochastic += alpha * db[k];
            energy += alpha * alpha * dt;
            x[k + 1] = x[k] + db[k] + if strong { alpha * dt } else { 0.0 };
        }
        PathOutcome { cost, stochastic, energy, terminal: x[n] }
    }

    fn simulate(&self, n_paths: usize, seed: u64, strong: bool) -> Vec<PathOutcome> {
        let n = self.grid.n_steps;
        let dt = self.grid.dt();
        (0..n_paths)
            .into_par_iter()
            .map_init(
                || (vec![0.0; n], vec![0.0; n + 1], vec![0.0; n]),
                |(db, x, kv), p| {
                    fill_normal(&mut path_stream(seed, p), dt, db);
                    self.run(db, strong, x, kv)
                },
            )
            .collect()
    }
}

fn weights(outcomes: &[PathOutcome]) -> Result<Vec<f64>> {
    outcomes
        .iter()
        .enumerate()
        .map(|(p, o)| {
            let w = (o.stochastic - 0.5 * o.energy).exp();
            if w.is_finite() {
                Ok(w)
            } else {
                Err(Error::WeightOverflow { path: p })
            }
        })
        .collect()
}

/// Strong-formulation value `E[−½∫|α − K(t, X^α)|² dt]` with
/// `X^α = ∫α + B` simulated directly.
pub fn strong_drift_value(
    setting: &DriftSetting,
    policy: ControlPolicy,
    n_paths: usize,
    seed: u64,
) -> Result<Estimate> {
    let run = DriftRun::new(setting, policy)?;
    let costs: Vec<f64> = run.simulate(n_paths, seed, true).iter().map(|o| o.cost).collect();
    Ok(estimate(&costs))
}

/// Weak-formulation value `E[M^α_T · (−½∫|α − K(t, B)|² dt)]`: the state is
/// the Brownian path itself and the control acts through the density.
pub fn weak_drift_value(setting: &DriftSetting, policy: ControlPolicy, n_paths: usize, seed: u64) -> Result<Estimate> {
    let run = DriftRun::new(setting, policy)?;
    let out = run.simulate(n_paths, seed, false);
    let w = weights(&out)?;
    let weighted: Vec<f64> = out.iter().zip(&w).map(|(o, w)| o.cost * w).collect();
    Ok(estimate(&weighted))
}

/// Moments `E[X_T]`, `E[X_T²]` of the controlled state computed both ways:
/// strong simulation of `X^α`, and Girsanov-reweighted Brownian paths. The
/// two samples are independent (`seed` and `seed + 1`).
pub fn girsanov_consistency(
    setting: &DriftSetting,
    policy: ControlPolicy,
    n_paths: usize,
    seed: u64,
    threshold: f64,
) -> Result<CheckReport> {
    let run = DriftRun::new(setting, policy)?;
    let strong = run.simulate(n_paths, seed, true);
    let weak = run.simulate(n_paths, seed.wrapping_add(1), false);
    let w = weights(&weak)?;
    let mut details = Vec::new();
    let mut report_metrics = Vec::new();
    for power in 1..=2 {
        let s: Vec<f64> = strong.iter().map(|o| o.terminal.powi(power)).collect();
        let r: Vec<f64> = weak.iter().zip(&w).map(|(o, w)| w * o.terminal.powi(power)).collect();
        let (es, ew) = (estimate(&s), estimate(&r));
        let se = es.std_err.hypot(ew.std_err);
        details.push(CheckDetail::z(format!("moment {power}"), es.mean - ew.mean, se, threshold));
        report_metrics.push((format!("strong moment {power}"), es.mean));
        report_metrics.push((format!("weak moment {power}"), ew.mean));
    }
    let mut report = CheckReport::from_details("girsanov consistency", details);
    for (k, v) in report_metrics {
        report = report.with_metric(k, v);
    }
    Ok(report)
}

/// Discrete backward recursion `Y_k = Y_{k+1} + f*(t_k, X_k, Z_k) dt − Z_k ΔX_k`
/// along `X = B`, started from `g(X_T)`, with `Z = z(t, x)` supplied.
/// Returns the sample estimate of `Y_0`.
pub fn fstar_bsde_value(
    spec: &HamiltonianSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    z: &(dyn Fn(f64, f64) -> f64 + Sync),
) -> Estimate {
    let n = grid.n_steps;
    let dt = grid.dt();
    let y0: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], vec![0.0; n + 1]),
            |(db, x), p| {
                fill_normal(&mut path_stream(seed, p), dt, db);
                for k in 0..n {
                    x[k + 1] = x[k] + db[k];
                }
                let mut y = spec.terminal(x[n]);
                for k in (0..n).rev() {
                    let t = grid.time(k);
                    let zk = z(t, x[k]);
                    y += f_star(spec, t, x[k], zk).0 * dt - zk * db[k];
                }
                y
            },
        )
        .collect();
    estimate(&y0)
}

/// Width of the band in which the block-averaged strong value must lie:
/// `(T/(2n))·(log₂ n + 2)`.
pub fn strong_tolerance(t_end: f64, n: usize) -> f64 {
    t_end / (2.0 * n as f64) * ((n as f64).log2() + 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrongLevel {
    pub n: usize,
    pub value: Estimate,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlExperimentResult {
    pub name: String,
    pub value_weak: Estimate,
    pub value_hjb: Option<f64>,
    pub values_strong: Vec<StrongLevel>,
    pub optimal_control: String,
    pub checks: Vec<CheckReport>,
    pub metrics: BTreeMap<String, f64>,
}

impl ControlExperimentResult {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftExperimentOptions {
    pub levels: Vec<usize>,
    pub n_steps: usize,
    pub t_end: f64,
    pub depth: usize,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for DriftExperimentOptions {
    fn default() -> Self {
        DriftExperimentOptions {
            levels: vec![2, 4, 8, 16],
            n_steps: 256,
            t_end: 1.0,
            depth: 20,
            n_paths: 100_000,
            seed: 1,
        }
    }
}

/// Drift control with Tsirelson's reference drift. The weak optimum `α = K`
/// has value 0; the strong sequence uses block averages of `K`. Also checks
/// that `Y = Z = 0` solves the associated FBSDE along the weak solution.
pub fn drift_control_experiment(opts: &DriftExperimentOptions) -> Result<ControlExperimentResult> {
    if opts.levels.is_empty() {
        return Err(Error::Config("at least one strong level is required".into()));
    }
    let setting = DriftSetting {
        t_end: opts.t_end,
        n_steps: opts.n_steps,
        kernel: ReferenceDrift::Tsirelson { depth: opts.depth },
    };
    let value_weak = weak_drift_value(&setting, ControlPolicy::Kernel, opts.n_paths, opts.seed)?;
    let mut values_strong = Vec::with_capacity(opts.levels.len());
    for &n in &opts.levels {
        let value = strong_drift_value(&setting, ControlPolicy::Blocks(n), opts.n_paths, opts.seed)?;
        values_strong.push(StrongLevel { n, value, tolerance: strong_tolerance(opts.t_end, n) });
    }

    let mut details = vec![CheckDetail::at_most("|weak value|", value_weak.mean.abs(), 0.0)];
    let worst = values_strong.iter().map(|l| l.value.mean).fold(f64::NEG_INFINITY, f64::max);
    details.push(CheckDetail::at_most("largest strong value", worst, 0.0));
    let deepest = values_strong.iter().max_by_key(|l| l.n).expect("levels");
    let shallowest = values_strong.iter().min_by_key(|l| l.n).expect("levels");
    details.push(CheckDetail::at_most(
        format!("deepest gap (n = {})", deepest.n),
        deepest.value.mean.abs(),
        deepest.tolerance + 3.0 * deepest.value.std_err,
    ));
    details.push(CheckDetail::at_least(
        format!("shallowest z (n = {})", shallowest.n),
        -shallowest.value.z_score(),
        10.0,
    ));
    let mut checks = vec![CheckReport::from_details("drift control values", details)];
    checks.push(drift_fbsde_residual(&setting, opts.n_paths.min(10_000), opts.seed)?);

    let mut metrics = BTreeMap::new();
    let rising = values_strong.windows(2).filter(|w| w[1].value.mean >= w[0].value.mean).count();
    metrics.insert("rising_steps".into(), rising as f64);
    Ok(ControlExperimentResult {
        name: "drift control".into(),
        value_weak,
        value_hjb: None,
        values_strong,
        optimal_control: "alpha*(t) = K(t, X) (Tsirelson drift of the observed path)".into(),
        checks,
        metrics,
    })
}

/// Backward residual of `Y = Z = 0` for the FBSDE with forward drift
/// `Z + K` and driver `½Z² + KZ`, along Euler paths of the weak solution.
fn drift_fbsde_residual(setting: &DriftSetting, n_paths: usize, seed: u64) -> Result<CheckReport> {
    let ReferenceDrift::Tsirelson { depth } = setting.kernel else {
        return Err(Error::Config("the FBSDE residual uses the Tsirelson drift".into()));
    };
    let mut params = Params::new();
    params.insert("horizon".into(), setting.t_end);
    params.insert("depth".into(), depth as f64);
    let coeffs = problem("tsirelson", &params)?
        .with_drift(Deps::Z, |_, _, _, z, out| out[0] = z[0])
        .with_driver(Deps::Z, |_, _, _, z| 0.5 * z[0] * z[0]);
    let grid = TimeGrid::new(setting.t_end, setting.n_steps)?;
    let box_grid = TimeSpaceGrid::uniform(setting.t_end, 1, 3, -1e6, 1e6)?;
    let zero = DecouplingField::from_values(box_grid, vec![0.0; 6], FieldMeta::default());
    let bundle = build_fbsde_solution(&zero, &coeffs, &[0.0], &grid, n_paths, seed)?;
    let dt = grid.dt();
    let worst = (0..bundle.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut drift = [0.0];
            let mut worst = 0.0f64;
            for k in 0..grid.n_steps {
                drift_on_path(&coeffs, &bundle, p, k, &mut drift);
                let z = bundle.z_at(p, k)[0];
                let kernel = drift[0] - z;
                let dx = bundle.x_at(p, k + 1)[0] - bundle.x_at(p, k)[0];
                let r = bundle.y_at(p, k) - bundle.y_at(p, k + 1) - (0.5 * z * z + kernel * z) * dt + z * dx;
                worst = worst.max(r.abs());
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    Ok(CheckReport::from_details("drift FBSDE residual", vec![CheckDetail::at_most("sup residual", worst, 1e-12)]))
}

/// `(1/h)∫(1 − |s|/h) σ₀²(x + s) ds`, which equals the second difference
/// `(g(x+h) − 2g(x) + g(x−h))/h²` of `g = ∫∫σ₀²`. `x ± h` and `x` must be
/// multiples of `2^-level`; cells of that width are integrated exactly.
pub fn hat_average_sigma_sq(lambda: f64, x: f64, h: f64, level: u32) -> Result<f64> {
    PathFunctional::barlow(lambda)?;
    let width = 0.5f64.powi(level as i32);
    let cells = (2.0 * h / width).round() as usize;
    if cells == 0 || ((x - h) / width).fract() != 0.0 || (h / width).fract() != 0.0 {
        return Err(Error::Domain(format!("x = {x}, h = {h} are not multiples of 2^-{level}")));
    }
    let moments = crate::simulate::TentMoments::new(lambda, 2);
    let (m, q) = (&moments.m, &moments.q);
    let tail = lambda.powi(level as i32);
    let resolved = |r: f64| {
        let (mut acc, mut w, mut arg) = (1.0, 1.0, r);
        for _ in 0..level {
            acc += w * tent(arg);
            w *= lambda;
            arg *= 2.0;
        }
        acc
    };
    let mut total = 0.0;
    for c in 0..cells {
        let a = x - h + c as f64 * width;
        let a0 = resolved(a);
        let a1 = resolved(a + width) - a0;
        // hat weight on the cell, as c0 + c1·v
        let (w0, w1) = (1.0 - (a - x).abs() / h, 1.0 - (a + width - x).abs() / h);
        let (c0, c1) = (w0 / h, (w1 - w0) / h);
        // ∫(c0 + c1 v)[(a0 + a1 v)² + 2λᴹ(a0 + a1 v)S + λ²ᴹS²] dv
        let quad = [c0 * a0 * a0, c1 * a0 * a0 + 2.0 * c0 * a0 * a1, 2.0 * c1 * a0 * a1 + c0 * a1 * a1, c1 * a1 * a1];
        let exact: f64 = quad.iter().enumerate().map(|(k, v)| v / (k + 1) as f64).sum();
        let lin = [c0 * a0, c1 * a0 + c0 * a1, c1 * a1];
        let cross: f64 = lin.iter().zip(m).map(|(v, mk)| v * mk).sum();
        let square = c0 * q[0] + c1 * q[1];
        total += width * (exact + 2.0 * tail * cross + tail * tail * square);
    }
    Ok(total)
}

/// Barlow dynamics with driver `−½σ₀⁴` and terminal `g`, so that
/// `g(X_t) − ½∫σ₀⁴(X_s) ds` is the backward martingale along `α* = σ₀(X)`.
pub fn barlow_control_coefficients(lambda: f64) -> Result<(CoefficientSet, BarlowTerminal)> {
    let mut params = Params::new();
    params.insert("lambda".into(), lambda);
    let terms = barlow_terms(lambda);
    let g = BarlowTerminal::new(lambda)?;
    let gt = g.clone();
    let coeffs = problem("barlow", &params)?
        .with_driver(Deps::X, move |_, x, _, _| -0.5 * barlow_series(lambda, terms, x[0]).powi(4))
        .with_terminal(move |x| gt.value(x[0]));
    Ok((coeffs, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionExperimentOptions {
    pub lambda: f64,
    pub grid: TimeSpaceGrid,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for DiffusionExperimentOptions {
    fn default() -> Self {
        DiffusionExperimentOptions {
            lambda: 0.75,
            grid: TimeSpaceGrid::uniform(1.0, 200, 400, -4.0, 4.0).expect("default grid"),
            n_steps: 200,
            n_paths: 100_000,
            seed: 1,
            threshold: 5.0,
        }
    }
}

pub const HJB_TOLERANCE: f64 = 1e-2;
pub const SECOND_DIFFERENCE_TOLERANCE: f64 = 1e-6;

/// Diffusion control with the Barlow coefficient: HJB value at the origin,
/// the identity `g″ = σ₀²` in hat-averaged form, and the martingale property
/// of `g(X) + ∫f` along the optimally controlled dynamics.
pub fn diffusion_control_experiment(opts: &DiffusionExperimentOptions) -> Result<ControlExperimentResult> {
    let mut params = BTreeMap::new();
    params.insert("lambda".to_string(), opts.lambda);
    let spec = hamiltonian_spec("diffusion-barlow", &params)?;
    let g = BarlowTerminal::new(opts.lambda)?;
    let mut checks = Vec::new();
    let mut metrics = BTreeMap::new();

    let field = solve_hjb(&spec, &opts.grid, &HjbOptions::default())?;
    let u00 = field.interpolate(0.0, &[0.0], None);
    let half = 0.5 * (opts.grid.hi[0] - opts.grid.lo[0]);
    let mid = 0.5 * (opts.grid.hi[0] + opts.grid.lo[0]);
    let gap = (0..opts.grid.n_x[0])
        .map(|i| opts.grid.coord(0, i))
        .filter(|x| (x - mid).abs() <= 0.5 * half)
        .map(|x| (field.interpolate(0.0, &[x], None) - g.value(x)).abs())
        .fold(0.0f64, f64::max);
    metrics.insert("hjb_sup_gap_inner".into(), gap);
    checks.push(CheckReport::from_details(
        "hjb value",
        vec![
            CheckDetail::at_most("|u(0,0)|", u00.abs(), HJB_TOLERANCE),
            CheckDetail::at_most("|g(0)|", g.value(0.0).abs(), 0.0),
        ],
    ));

    let h = 0.125;
    let mut worst = 0.0f64;
    for j in 0..16 {
        let x = j as f64 / 16.0;
        let lhs = (g.value(x + h) - 2.0 * g.value(x) + g.value(x - h)) / (h * h);
        worst = worst.max((lhs - hat_average_sigma_sq(opts.lambda, x, h, g.level())?).abs());
    }
    checks.push(CheckReport::from_details(
        "second difference of g",
        vec![CheckDetail::at_most("max error", worst, SECOND_DIFFERENCE_TOLERANCE)],
    ));

    // Y already carries the running cost, so the martingale test uses the
    // driftless, driverless catalog coefficients.
    let grid = TimeGrid::new(opts.grid.t_end, opts.n_steps)?;
    let bundle = barlow_time_change(&g, &grid, opts.n_paths, opts.seed, FineSteps::default())?;
    let plain = problem("barlow", &params)?;
    let martingale = check_martingale(&bundle, &plain, MartingaleProcess::Backward, opts.threshold)?;
    let nodes = bundle.nodes();
    let values: Vec<f64> = (0..bundle.n_paths).map(|p| bundle.y[p * nodes + grid.n_steps]).collect();
    drop(bundle);
    checks.push(martingale.clone());
    let mut optimal = String::from("alpha*(t) = sigma0(X_t)");
    if let Some(detail) = martingale.detail("terminal") {
        optimal.push_str(&format!("; terminal z = {:.3}", detail.statistic / detail.std_err));
    }
    Ok(ControlExperimentResult {
        name: "diffusion control".into(),
        value_weak: estimate(&values),
        value_hjb: Some(u00),
        values_strong: Vec::new(),
        optimal_control: optimal,
        checks,
        metrics,
    })
}
