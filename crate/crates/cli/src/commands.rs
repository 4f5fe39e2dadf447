use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use wfbsde::control::{
    diffusion_control_experiment, drift_control_experiment, hamiltonian_catalog, hamiltonian_spec, probe_hamiltonians,
    DiffusionExperimentOptions, DriftExperimentOptions, HamiltonianTable,
};
use wfbsde::io::{
    decode_bundle, decode_field, encode_field, parse_grid_flag, to_json, write_bundle, ExperimentConfig, GridSpec,
    SimulationConfig,
};
use wfbsde::mgcheck::{
    check_cross_variation, check_martingale, check_quadratic_variation, feynman_kac_residual, inject_drift,
    CheckReport, MartingaleProcess, NodalProblem, NodalResult, BISECTION_TOL, DEFAULT_THRESHOLD,
};
use wfbsde::pde::{
    pde_residual, regularity_estimates, solve_quasilinear, DecouplingField, FieldMeta, PdeResidual, RegularityReport,
    SolverOptions, TimeSpaceGrid,
};
use wfbsde::problem::{catalog_ids, problem, CoefficientSet, Params};
use wfbsde::simulate::{
    brownian_stats, euler_forward, isometry_gap, terminal_mean, tsirelson_statistics, BrownianStats, PathBundle,
    TimeGrid, TsirelsonStats,
};
use wfbsde::stats::Estimate;

use crate::args::{
    Cli, Command, ControlCommand, DiffusionArgs, DriftArgs, HamiltonianArgs, ProblemArgs, SimulateArgs, SolveArgs,
    VerifyArgs,
};
use crate::{CliError, Outcome};

type CliResult<T> = std::result::Result<T, CliError>;

pub const OUT_ENV: &str = "WFBSDE_OUT";
const DEFAULT_OUT: &str = "wfbsde-out";
/// Used when neither a flag nor a config supplies a seed.
pub const DEFAULT_SEED: u64 = 1;
const DEFAULT_SOLVE_GRID: GridSpec = GridSpec { n_t: 200, n_x: 400, lo: -4.0, hi: 4.0, t_end: 1.0 };
const DEFAULT_NODAL_GRID: GridSpec = GridSpec { n_t: 40, n_x: 81, lo: -4.0, hi: 4.0, t_end: 1.0 };
/// `Y` and `Z` are read off the field on the same nodes, so this only
/// absorbs interpolation rounding.
const FK_TOLERANCE: f64 = 1e-9;
const HAT_TOLERANCE: f64 = 1e-8;
const REGULARITY_ALPHA: f64 = 0.5;
const REGULARITY_DELTA: f64 = 0.1;

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> CliResult<Outcome> {
    match &cli.command {
        Command::Catalog => catalog(out),
        Command::Solve(a) => solve(cli, a, out),
        Command::Simulate(a) => simulate(cli, a, out),
        Command::Verify(a) => verify(cli, a, out),
        Command::Control(ControlCommand::Drift(a)) => control_drift(cli, a, out),
        Command::Control(ControlCommand::Diffusion(a)) => control_diffusion(cli, a, out),
        Command::Control(ControlCommand::Hamiltonians(a)) => control_hamiltonians(cli, a, out),
    }
}

/// Flags merged over an optional config file.
struct Resolved {
    problem: String,
    params: Params,
    grid: Option<GridSpec>,
    seed: Option<u64>,
    simulation: SimulationConfig,
    threshold: f64,
    output: Option<PathBuf>,
}

fn resolve(p: &ProblemArgs) -> CliResult<Resolved> {
    let cfg = match &p.config {
        Some(path) => Some(ExperimentConfig::from_toml(&read(path)?)?),
        None => None,
    };
    let problem = p
        .problem
        .clone()
        .or_else(|| cfg.as_ref().map(|c| c.problem.clone()))
        .ok_or_else(|| CliError::Usage("--problem (or a config with `problem`) is required".into()))?;
    let mut params = cfg.as_ref().map(|c| c.params.clone()).unwrap_or_default();
    params.extend(parse_params(&p.params)?);
    let grid = match &p.grid {
        Some(flag) => Some(parse_grid_flag(flag)?),
        None => cfg.as_ref().and_then(|c| c.grid),
    };
    Ok(Resolved {
        problem,
        params,
        grid,
        seed: cfg.as_ref().map(|c| c.seed),
        simulation: cfg.as_ref().map(|c| c.simulation.clone()).unwrap_or_default(),
        threshold: cfg.as_ref().map_or(DEFAULT_THRESHOLD, |c| c.checks.threshold),
        output: cfg.and_then(|c| c.output),
    })
}

fn parse_params(raw: &[String]) -> CliResult<Params> {
    raw.iter()
        .map(|kv| {
            let (k, v) =
                kv.split_once('=').ok_or_else(|| CliError::Usage(format!("parameter `{kv}` is not KEY=VALUE")))?;
            let v: f64 = v.trim().parse().map_err(|_| CliError::Usage(format!("parameter `{k}` needs a number")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::File { path: path.display().to_string(), source })
}

fn output_dir(cli: &Cli, config: Option<&PathBuf>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.cloned())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn file_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::File { path: path.display().to_string(), source }
}

fn write_artifact(dir: &Path, name: &str, contents: &[u8]) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| file_error(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| file_error(&path, e))?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<PathBuf> {
    let mut text = to_json(value)?;
    text.push('\n');
    write_artifact(dir, name, text.as_bytes())
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) {
    let _ = writeln!(out, "{}", line.as_ref());
}

/// The same spec on every axis of a `dim`-dimensional problem.
fn pde_grid(spec: &GridSpec, dim: usize) -> CliResult<TimeSpaceGrid> {
    Ok(TimeSpaceGrid::new(spec.t_end, spec.n_t, vec![spec.lo; dim], vec![spec.hi; dim], vec![spec.n_x; dim])?)
}

fn catalog(out: &mut dyn Write) -> CliResult<Outcome> {
    say(out, "problems:");
    for (id, summary) in catalog_ids() {
        say(out, format!("  {id:<22} {summary}"));
    }
    say(out, "control specs:");
    for (id, summary) in hamiltonian_catalog() {
        say(out, format!("  {id:<22} {summary}"));
    }
    Ok(Outcome::Pass)
}

#[derive(Serialize)]
struct OracleComparison {
    x: Vec<f64>,
    value: f64,
    exact: f64,
    error: f64,
    /// sup over the central half of the box and all time slices
    inner_sup_error: f64,
}

#[derive(Serialize)]
struct SolveReport<'a> {
    problem: &'a str,
    params: &'a Params,
    grid: &'a TimeSpaceGrid,
    meta: &'a FieldMeta,
    residual: PdeResidual,
    regularity: RegularityReport,
    oracle: Option<OracleComparison>,
}

fn oracle(field: &DecouplingField, coeffs: &CoefficientSet) -> Option<OracleComparison> {
    let exact = coeffs.exact()?;
    let g = &field.grid;
    let x: Vec<f64> =
        (0..g.dim()).map(|a| if g.lo[a] <= 0.0 && 0.0 <= g.hi[a] { 0.0 } else { 0.5 * (g.lo[a] + g.hi[a]) }).collect();
    let value = field.interpolate(0.0, &x, None);
    let truth = exact(g.t_end, 0.0, &x);
    let mut coords = vec![0.0; g.dim()];
    let mut inner_sup_error = 0.0f64;
    for k in 0..=g.n_t {
        let t = g.time(k);
        for idx in (0..g.node_count()).filter(|&i| g.in_inner(i, 0.5)) {
            g.node_coords(idx, &mut coords);
            inner_sup_error = inner_sup_error.max((field.value(k, idx) - exact(g.t_end, t, &coords)).abs());
        }
    }
    Some(OracleComparison { x, value, exact: truth, error: (value - truth).abs(), inner_sup_error })
}

fn solve(cli: &Cli, a: &SolveArgs, out: &mut dyn Write) -> CliResult<Outcome> {
    let r = resolve(&a.problem)?;
    let coeffs = problem(&r.problem, &r.params)?;
    let spec = r.grid.unwrap_or(DEFAULT_SOLVE_GRID);
    let grid = pde_grid(&spec, coeffs.dim())?;
    let field = solve_quasilinear(&coeffs, &grid, &SolverOptions::default())?;
    let report = SolveReport {
        problem: &r.problem,
        params: &r.params,
        grid: &field.grid,
        meta: &field.meta,
        residual: pde_residual(&field, &coeffs),
        regularity: regularity_estimates(&field, REGULARITY_ALPHA, REGULARITY_DELTA),
        oracle: oracle(&field, &coeffs),
    };
    let dir = output_dir(cli, r.output.as_ref());
    let field_path = write_artifact(&dir, &format!("{}.field", r.problem), encode_field(&field).as_bytes())?;
    let report_path = write_json(&dir, &format!("{}.solve.json", r.problem), &report)?;
    say(out, format!("solve {}: {} steps x {} nodes on [{}, {}]", r.problem, spec.n_t, spec.n_x, spec.lo, spec.hi));
    say(
        out,
        format!(
            "  picard iterations {}, sup residual {:.3e}, rms residual {:.3e}",
            field.meta.picard_iters_used, report.residual.sup_residual, report.residual.l2_residual
        ),
    );
    if let Some(o) = &report.oracle {
        say(
            out,
            format!(
                "  u(0, {:?}) = {:.8} (exact {:.8}), inner sup error {:.3e}",
                o.x, o.value, o.exact, o.inner_sup_error
            ),
        );
    }
    say(out, format!("  wrote {} and {}", field_path.display(), report_path.display()));
    Ok(Outcome::Pass)
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    problem: &'a str,
    params: &'a Params,
    seed: u64,
    n_paths: usize,
    n_steps: usize,
    dt: f64,
    x0: &'a [f64],
    terminal_mean: Vec<f64>,
    /// `|X_T − X_0|² − ∫|σ|² dt`, mean zero for driftless dynamics
    isometry_gap: Estimate,
    brownian: BrownianStats,
    exit_fraction: f64,
    warnings: &'a [String],
    tsirelson: Option<TsirelsonStats>,
}

fn load_field(path: Option<&PathBuf>) -> CliResult<Option<DecouplingField>> {
    path.map(|p| Ok(decode_field(&read(p)?)?)).transpose()
}

fn simulate(cli: &Cli, a: &SimulateArgs, out: &mut dyn Write) -> CliResult<Outcome> {
    let r = resolve(&a.problem)?;
    let coeffs = problem(&r.problem, &r.params)?;
    let field = load_field(a.field.as_ref())?;
    if field.is_none() && coeffs.depends_on_solution() {
        return Err(CliError::Usage(format!("problem `{}` reads (Y, Z); pass --field from `solve`", r.problem)));
    }
    let seed = a.seed.or(r.seed).unwrap_or(DEFAULT_SEED);
    let paths = a.paths.unwrap_or(r.simulation.paths);
    let dt = a.dt.unwrap_or(r.simulation.dt);
    let t_end = field.as_ref().map(|f| f.grid.t_end).or(r.grid.map(|g| g.t_end)).unwrap_or(1.0);
    let grid = TimeGrid::with_dt(t_end, dt)?;
    let x0 = a.x0.clone().unwrap_or_else(|| {
        if r.simulation.x0.is_empty() {
            vec![0.0; coeffs.dim()]
        } else {
            r.simulation.x0.clone()
        }
    });
    let bundle = euler_forward(&coeffs, field.as_ref(), &x0, &grid, paths, seed)?;
    let tsirelson = coeffs.path_drift().map(|f| tsirelson_statistics(&bundle, f, grid.dt())).transpose()?;
    let summary = SimulateSummary {
        problem: &r.problem,
        params: &r.params,
        seed,
        n_paths: paths,
        n_steps: grid.n_steps,
        dt: grid.dt(),
        x0: &x0,
        terminal_mean: terminal_mean(&bundle),
        isometry_gap: isometry_gap(&bundle, &coeffs),
        brownian: brownian_stats(&bundle.increments, bundle.n_paths, grid.n_steps, bundle.dim, grid.dt()),
        exit_fraction: bundle.exit_fraction,
        warnings: &bundle.warnings,
        tsirelson,
    };
    let dir = output_dir(cli, r.output.as_ref());
    let bundle_path = write_bundle_file(&dir, &format!("{}.bundle", r.problem), &bundle)?;
    let summary_path = write_json(&dir, &format!("{}.simulate.json", r.problem), &summary)?;
    say(
        out,
        format!("simulate {}: {} paths, {} steps of {}, seed {}", r.problem, paths, grid.n_steps, grid.dt(), seed),
    );
    let iso = &summary.isometry_gap;
    say(out, format!("  isometry gap {:.4e} ± {:.2e}", iso.mean, iso.std_err));
    if let Some(t) = &summary.tsirelson {
        say(
            out,
            format!(
                "  mean K {:.4} ± {:.1e}, E exp(2πiK) = {:.4} + {:.4}i",
                t.mean_drift.mean, t.mean_drift.std_err, t.fourier_re.mean, t.fourier_im.mean
            ),
        );
    }
    for w in &bundle.warnings {
        say(out, format!("  warning: {w}"));
    }
    say(out, format!("  wrote {} and {}", bundle_path.display(), summary_path.display()));
    Ok(Outcome::Pass)
}

fn write_bundle_file(dir: &Path, name: &str, bundle: &PathBundle) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| file_error(dir, e))?;
    let path = dir.join(name);
    let file = fs::File::create(&path).map_err(|e| file_error(&path, e))?;
    let mut w = BufWriter::new(file);
    write_bundle(bundle, &mut w).and_then(|_| w.flush()).map_err(|e| file_error(&path, e))?;
    Ok(path)
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    problem: &'a str,
    threshold: f64,
    injected_drift: Option<f64>,
    pass: bool,
    checks: Vec<CheckReport>,
}

#[derive(Serialize)]
struct NodalReport<'a> {
    problem: &'a str,
    t: f64,
    x: f64,
    target: Option<f64>,
    pass: bool,
    levels: Vec<NodalResult>,
}

fn verify(cli: &Cli, a: &VerifyArgs, out: &mut dyn Write) -> CliResult<Outcome> {
    let r = resolve(&a.problem)?;
    let coeffs = problem(&r.problem, &r.params)?;
    let dir = output_dir(cli, r.output.as_ref());
    if let Some(point) = &a.nodal {
        return verify_nodal(&r, &coeffs, point, a, &dir, out);
    }
    let bundle_path =
        a.bundle.as_ref().ok_or_else(|| CliError::Usage("verify needs --bundle (or --nodal t,x)".into()))?;
    let mut bundle = decode_bundle(&read(bundle_path)?)?;
    let field = load_field(a.field.as_ref())?;
    let threshold = a.threshold.unwrap_or(r.threshold);
    if let Some(rate) = a.inject_drift {
        inject_drift(&mut bundle, MartingaleProcess::Forward, rate);
    }
    let selected: Vec<String> = match &a.checks {
        Some(c) => c.iter().map(|s| s.trim().to_ascii_lowercase()).collect(),
        None if field.is_some() => ["mx", "my", "qv", "cross"].map(String::from).to_vec(),
        None => ["mx", "my", "qv"].map(String::from).to_vec(),
    };
    let need_field = || field.as_ref().ok_or_else(|| CliError::Usage("this check needs --field".into()));
    let mut checks = Vec::new();
    for name in &selected {
        let report = match name.as_str() {
            "mx" => check_martingale(&bundle, &coeffs, MartingaleProcess::Forward, threshold)?,
            "my" => check_martingale(&bundle, &coeffs, MartingaleProcess::Backward, threshold)?,
            "qv" => check_quadratic_variation(&bundle, &coeffs, threshold)?,
            "cross" => check_cross_variation(&bundle, &coeffs, Some(need_field()?), threshold)?,
            "fk" => feynman_kac_residual(&bundle, need_field()?, FK_TOLERANCE)?,
            other => return Err(CliError::Usage(format!("unknown check `{other}` (mx, my, qv, cross, fk)"))),
        };
        say(out, report.to_string());
        checks.push(report);
    }
    let pass = checks.iter().all(|c| c.pass);
    let report = VerifyReport { problem: &r.problem, threshold, injected_drift: a.inject_drift, pass, checks };
    let path = write_json(&dir, &format!("{}.verify.json", r.problem), &report)?;
    say(out, format!("verify {}: {} (wrote {})", r.problem, if pass { "PASS" } else { "FAIL" }, path.display()));
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

fn verify_nodal(
    r: &Resolved,
    coeffs: &CoefficientSet,
    point: &[f64],
    a: &VerifyArgs,
    dir: &Path,
    out: &mut dyn Write,
) -> CliResult<Outcome> {
    let [t, x] = point else {
        return Err(CliError::Usage("--nodal takes `t,x`".into()));
    };
    if coeffs.dim() != 1 {
        return Err(CliError::Usage("nodal verification is one-dimensional".into()));
    }
    if a.levels.is_empty() {
        return Err(CliError::Usage("--levels must name at least one n".into()));
    }
    let grid = pde_grid(&r.grid.unwrap_or(DEFAULT_NODAL_GRID), 1)?;
    let mut levels = Vec::new();
    let mut pass = true;
    for &n in &a.levels {
        let nodal = NodalProblem::new(coeffs, &grid, n)?;
        let res = match a.target {
            Some(y) => match nodal.select(*t, &[*x], y, BISECTION_TOL) {
                Ok(res) => res,
                Err(wfbsde::Error::OutOfNodalSet { .. }) => {
                    pass = false;
                    nodal.bounds(*t, &[*x])?
                }
                Err(e) => return Err(e.into()),
            },
            None => nodal.bounds(*t, &[*x])?,
        };
        let alpha = res.alpha_star.map_or(String::new(), |al| format!(", alpha* {al:.6}"));
        say(out, format!("nodal n={n}: [{:.6}, {:.6}] width {:.6}{alpha}", res.u_lower, res.u_upper, res.width()));
        levels.push(res);
    }
    let report = NodalReport { problem: &r.problem, t: *t, x: *x, target: a.target, pass, levels };
    let path = write_json(dir, &format!("{}.nodal.json", r.problem), &report)?;
    say(out, format!("verify nodal {}: {} (wrote {})", r.problem, if pass { "PASS" } else { "FAIL" }, path.display()));
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

fn control_drift(cli: &Cli, a: &DriftArgs, out: &mut dyn Write) -> CliResult<Outcome> {
    let opts = DriftExperimentOptions {
        levels: a.levels.clone(),
        n_steps: a.steps,
        n_paths: a.paths,
        seed: a.seed,
        ..Default::default()
    };
    let result = drift_control_experiment(&opts)?;
    say(out, format!("control drift: weak value {:.6e} ± {:.1e}", result.value_weak.mean, result.value_weak.std_err));
    for level in &result.values_strong {
        say(
            out,
            format!(
                "  n={:<3} strong value {:.6} ± {:.1e} (tolerance {:.4})",
                level.n, level.value.mean, level.value.std_err, level.tolerance
            ),
        );
    }
    finish_experiment(cli, "control-drift.json", &result, out)
}

fn control_diffusion(cli: &Cli, a: &DiffusionArgs, out: &mut dyn Write) -> CliResult<Outcome> {
    let grid = pde_grid(&parse_grid_flag(&a.grid)?, 1)?;
    let opts = DiffusionExperimentOptions {
        lambda: a.lambda,
        grid,
        n_steps: a.steps,
        n_paths: a.paths,
        seed: a.seed,
        ..Default::default()
    };
    let result = diffusion_control_experiment(&opts)?;
    say(
        out,
        format!(
            "control diffusion: HJB u(0,0) = {:.6e}, weak value {:.4e} ± {:.1e}",
            result.value_hjb.unwrap_or(f64::NAN),
            result.value_weak.mean,
            result.value_weak.std_err
        ),
    );
    finish_experiment(cli, "control-diffusion.json", &result, out)
}

fn finish_experiment(
    cli: &Cli,
    name: &str,
    result: &wfbsde::control::ControlExperimentResult,
    out: &mut dyn Write,
) -> CliResult<Outcome> {
    for c in &result.checks {
        say(out, format!("  {c}"));
    }
    let path = write_json(&output_dir(cli, None), name, result)?;
    say(out, format!("  optimal control: {}", result.optimal_control));
    say(out, format!("  wrote {}", path.display()));
    Ok(if result.pass() { Outcome::Pass } else { Outcome::Fail })
}

fn hamiltonian_tsv(table: &HamiltonianTable) -> String {
    let mut s = String::from("t\tx\tz\tgamma\tH\tH_hat\tH_tilde\targmax\n");
    for p in &table.probes {
        s += &format!(
            "{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\n",
            p.t, p.x, p.z, p.gamma, p.h, p.h_hat, p.h_tilde, p.argmax
        );
    }
    s
}

fn control_hamiltonians(cli: &Cli, a: &HamiltonianArgs, out: &mut dyn Write) -> CliResult<Outcome> {
    let spec = hamiltonian_spec(&a.problem, &parse_params(&a.params)?)?;
    let table = probe_hamiltonians(&spec, a.probes, a.seed);
    let dir = output_dir(cli, None);
    let tsv = write_artifact(&dir, &format!("hamiltonians-{}.tsv", a.problem), hamiltonian_tsv(&table).as_bytes())?;
    let json = write_json(&dir, &format!("hamiltonians-{}.json", a.problem), &table)?;
    say(out, format!("hamiltonians {}: {} probes", a.problem, table.probes.len()));
    say(out, format!("  max |Ĥ − H| = {:.3e}", table.max_hat_gap));
    say(out, format!("  |H̃ − H| > {:.0e} at {:.1}% of probes", table.tilde_tol, 100.0 * table.tilde_fraction));
    say(out, format!("  wrote {} and {}", tsv.display(), json.display()));
    Ok(if table.max_hat_gap <= HAT_TOLERANCE { Outcome::Pass } else { Outcome::Fail })
}
