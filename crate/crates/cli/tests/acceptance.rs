//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use wfbsde::control::{
    diffusion_control_experiment, drift_control_experiment, girsanov_consistency, hamiltonian_catalog,
    hamiltonian_spec, probe_hamiltonians, ControlPolicy, DiffusionExperimentOptions, DriftExperimentOptions,
    DriftSetting, ReferenceDrift,
};
use wfbsde::mgcheck::{
    check_cross_variation, check_martingale, check_quadratic_variation, cross_variation_refinement, inject_drift,
    MartingaleProcess, NodalProblem, BISECTION_TOL,
};
use wfbsde::pde::{solve_quasilinear, SolverOptions, TimeSpaceGrid};
use wfbsde::problem::{problem, Params};
use wfbsde::simulate::{barlow_series, barlow_terms, build_fbsde_solution, TimeGrid};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn heat_oracle() -> Outcome {
    let start = Instant::now();
    let c = problem("heat-x2", &Params::new()).map_err(|e| e.to_string())?;
    let err = |n_t, n_x| -> Result<f64, String> {
        let g = TimeSpaceGrid::uniform(1.0, n_t, n_x, -4.0, 4.0).map_err(|e| e.to_string())?;
        let f = solve_quasilinear(&c, &g, &SolverOptions::default()).map_err(|e| e.to_string())?;
        Ok((f.interpolate(0.0, &[0.0], None) - 1.0).abs())
    };
    let coarse = err(200, 400)?;
    let fine = err(400, 800)?;
    let elapsed = start.elapsed();
    verdict(
        coarse <= 5e-3 && coarse >= 3.0 * fine && elapsed < Duration::from_secs(10),
        format!("|u(0,0) − 1| = {coarse:.3e} → {fine:.3e} (ratio {:.2}), {:.1?}", coarse / fine, elapsed),
    )
}

fn examples_reproduced() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    for id in ["example-2.1", "example-2.2"] {
        let c = problem(id, &Params::new()).map_err(|e| e.to_string())?;
        let g = TimeSpaceGrid::uniform(1.0, 100, 241, -6.0, 6.0).map_err(|e| e.to_string())?;
        let f = solve_quasilinear(&c, &g, &SolverOptions::default()).map_err(|e| e.to_string())?;
        let mut pde = 0.0f64;
        for k in 0..=g.n_t {
            for i in (0..g.node_count()).filter(|&i| g.in_inner(i, 0.5)) {
                pde = pde.max((f.value(k, i) - g.coord(0, i)).abs());
            }
        }
        let b = build_fbsde_solution(&f, &c, &[0.0], &TimeGrid::new(1.0, 100).unwrap(), 10_000, 21)
            .map_err(|e| e.to_string())?;
        let yx = b.y.iter().zip(&b.x).map(|(y, x)| (y - x).abs()).fold(0.0, f64::max);
        let z1 = b.z.iter().map(|z| (z - 1.0).abs()).fold(0.0, f64::max);
        ok &= pde <= 1e-6 && yx <= 1e-6 && z1 <= 1e-6;
        notes.push(format!("{id}: |u − x| {pde:.1e}, |Y − X| {yx:.1e}, |Z − 1| {z1:.1e}"));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(30);
    verdict(ok, format!("{}; {:.1?}", notes.join("; "), elapsed))
}

fn martingale_suite() -> Outcome {
    let start = Instant::now();
    let c = problem("heat-x2", &Params::new()).map_err(|e| e.to_string())?;
    let g = TimeSpaceGrid::uniform(1.0, 200, 801, -6.0, 6.0).map_err(|e| e.to_string())?;
    let f = solve_quasilinear(&c, &g, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let mut b = build_fbsde_solution(&f, &c, &[0.0], &TimeGrid::new(1.0, 100).unwrap(), 100_000, 3)
        .map_err(|e| e.to_string())?;
    let reports = [
        check_martingale(&b, &c, MartingaleProcess::Forward, 5.0),
        check_martingale(&b, &c, MartingaleProcess::Backward, 5.0),
        check_quadratic_variation(&b, &c, 5.0),
        check_cross_variation(&b, &c, Some(&f), 5.0),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for r in reports {
        let r = r.map_err(|e| e.to_string())?;
        ok &= r.pass;
        notes.push(format!("{} z={:.2}", r.name, r.z_score()));
    }
    inject_drift(&mut b, MartingaleProcess::Forward, 0.5);
    let corrupted = check_martingale(&b, &c, MartingaleProcess::Forward, 5.0).map_err(|e| e.to_string())?;
    ok &= !corrupted.pass && corrupted.z_score().abs() >= 10.0;
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(120);
    verdict(ok, format!("{}; injected drift z={:.1}; {:.1?}", notes.join(", "), corrupted.z_score(), elapsed))
}

fn cross_variation_refines() -> Outcome {
    let c = problem("heat-x2", &Params::new()).map_err(|e| e.to_string())?;
    let g = TimeSpaceGrid::uniform(1.0, 200, 801, -6.0, 6.0).map_err(|e| e.to_string())?;
    let f = solve_quasilinear(&c, &g, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let levels = cross_variation_refinement(&c, &f, &[0.0], &TimeGrid::new(1.0, 25).unwrap(), 20_000, 5, 3)
        .map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = levels.windows(2).map(|w| w[0].mean_square_gap / w[1].mean_square_gap).collect();
    verdict(
        ratios.len() == 2 && ratios.iter().all(|&r| r >= 1.5),
        format!(
            "E gap² {} (ratios {})",
            levels.iter().map(|l| format!("{:.2e}", l.mean_square_gap)).collect::<Vec<_>>().join(" → "),
            ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn nodal_structure() -> Outcome {
    let c = problem("heat-x", &Params::new()).map_err(|e| e.to_string())?;
    let g = TimeSpaceGrid::uniform(1.0, 40, 81, -4.0, 4.0).map_err(|e| e.to_string())?;
    let (t, x) = (0.0, 0.3);
    let mut scaled = Vec::new();
    let mut worst_select = 0.0f64;
    let mut monotone = true;
    let mut worst_terminal = 0.0f64;
    for n in [5, 10, 20, 40] {
        let p = NodalProblem::new(&c, &g, n).map_err(|e| e.to_string())?;
        let b = p.bounds(t, &[x]).map_err(|e| e.to_string())?;
        scaled.push(b.width() * n as f64);
        for frac in [0.1, 0.37, 0.5, 0.83] {
            let y = b.u_lower + frac * b.width();
            let s = p.select(t, &[x], y, BISECTION_TOL).map_err(|e| e.to_string())?;
            let hit = p.field(s.alpha_star.unwrap()).map_err(|e| e.to_string())?.interpolate(t, &[x], None);
            worst_select = worst_select.max((hit - y).abs());
        }
        let fields: Vec<_> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&a| p.field(a))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        monotone &= fields.windows(2).all(|w| w[0].values().iter().zip(w[1].values()).all(|(a, b)| a <= b));
        let inv = 1.0 / n as f64;
        for xt in [-1.0, 0.0, 0.7] {
            let r = p.bounds(1.0, &[xt]).map_err(|e| e.to_string())?;
            let gn = p.mollified().terminal(&[xt]);
            let dev = (r.u_lower - (gn - inv))
                .abs()
                .max((r.u_upper - (gn + inv)).abs())
                .max(((gn - xt).abs() - inv).max(0.0));
            worst_terminal = worst_terminal.max(dev);
        }
    }
    let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;
    let spread = scaled.iter().map(|s| (s / mean - 1.0).abs()).fold(0.0, f64::max);
    verdict(
        spread <= 0.10 && worst_select <= 1e-6 && monotone && worst_terminal <= 1e-9,
        format!(
            "n·width {} (spread {:.1}%), select error {worst_select:.1e}, monotone {monotone}, terminal deviation {worst_terminal:.1e}",
            scaled.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>().join(" "),
            100.0 * spread
        ),
    )
}

fn hamiltonian_identities() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (id, _) in hamiltonian_catalog() {
        let spec = hamiltonian_spec(id, &BTreeMap::new()).map_err(|e| e.to_string())?;
        let t = probe_hamiltonians(&spec, 1000, 17);
        ok &= t.max_hat_gap <= 1e-8;
        if id == "diffusion-barlow" {
            ok &= t.tilde_fraction >= 0.5;
        }
        notes.push(format!("{id}: |Ĥ−H| ≤ {:.1e}, H̃≠H at {:.0}%", t.max_hat_gap, 100.0 * t.tilde_fraction));
    }
    verdict(ok, notes.join("; "))
}

fn drift_control() -> Outcome {
    let start = Instant::now();
    let r = drift_control_experiment(&DriftExperimentOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let exact_zero = r.value_weak.mean == 0.0 && r.value_weak.std_err == 0.0;
    verdict(
        r.pass() && exact_zero && elapsed < Duration::from_secs(180),
        format!(
            "weak {:.1e}; strong {}; {:.1?}",
            r.value_weak.mean,
            r.values_strong
                .iter()
                .map(|l| format!("n={} {:.4}±{:.0e}", l.n, l.value.mean, l.value.std_err))
                .collect::<Vec<_>>()
                .join(", "),
            elapsed
        ),
    )
}

fn diffusion_control() -> Outcome {
    let r = diffusion_control_experiment(&DiffusionExperimentOptions::default()).map_err(|e| e.to_string())?;
    let (lambda, terms) = (0.75f64, barlow_terms(0.75));
    let tail = lambda.powi(terms as i32 + 1) * 0.5 / (1.0 - lambda);
    let (mut lo, mut hi, mut period) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for i in 0..=20_000 {
        let x = -2.0 + 4.0 * i as f64 / 20_000.0;
        let s = barlow_series(lambda, terms, x);
        lo = lo.min(s);
        hi = hi.max(s);
        period = period.max((barlow_series(lambda, terms, x + 1.0) - s).abs());
    }
    let half = (barlow_series(lambda, terms, 0.5) - 1.5).abs();
    let sigma_ok = lo >= 1.0 - tail && hi <= 3.0 + tail && period <= 2.0 * tail && half <= tail;
    verdict(
        r.pass() && sigma_ok,
        format!(
            "u(0,0) = {:.2e}; {}; σ₀ ∈ [{lo:.4}, {hi:.4}], period error {period:.1e}, |σ₀(½) − 1.5| {half:.1e}",
            r.value_hjb.unwrap_or(f64::NAN),
            r.checks.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("; ")
        ),
    )
}

fn girsanov() -> Outcome {
    let setting = DriftSetting { t_end: 1.0, n_steps: 256, kernel: ReferenceDrift::Tsirelson { depth: 20 } };
    let mut ok = true;
    let mut notes = Vec::new();
    for blocks in [2, 4, 8] {
        let r = girsanov_consistency(&setting, ControlPolicy::Blocks(blocks), 100_000, 9, 5.0)
            .map_err(|e| e.to_string())?;
        ok &= r.pass;
        notes.push(format!("{blocks} blocks z={:.2}", r.z_score()));
    }
    verdict(ok, notes.join(", "))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).expect("output dir") {
        let path = entry.expect("entry").path();
        files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).expect("read"));
    }
    files
}

fn determinism() -> Outcome {
    let commands: [&[&str]; 8] = [
        &["solve", "--problem", "heat-x2", "--grid", "50,101,-6,6"],
        &[
            "simulate",
            "--problem",
            "heat-x2",
            "--field",
            "{out}/heat-x2.field",
            "--paths",
            "500",
            "--seed",
            "7",
            "--dt",
            "0.05",
        ],
        &["verify", "--problem", "heat-x2", "--bundle", "{out}/heat-x2.bundle", "--field", "{out}/heat-x2.field"],
        &["simulate", "--problem", "barlow", "--paths", "500", "--seed", "7"],
        &["verify", "--problem", "example-2.1", "--nodal", "0,0", "--levels", "5,10"],
        &["control", "hamiltonians", "--problem", "drift-k", "--probes", "200"],
        &["control", "drift", "--paths", "2000", "--levels", "2,4", "--steps", "64"],
        &["control", "diffusion", "--paths", "2000", "--grid", "50,100,-4,4", "--steps", "50"],
    ];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let out_dir = dir.path().to_string_lossy().into_owned();
        let mut transcript = Vec::new();
        for cmd in commands {
            let mut args = vec!["wfbsde".to_string(), "--out".into(), out_dir.clone()];
            args.extend(cmd.iter().map(|a| a.replace("{out}", &out_dir)));
            let mut stdout = Vec::new();
            let mut stderr = Vec::new();
            let code = wfbsde_cli::run(&args, &mut stdout, &mut stderr);
            if code == 2 {
                return Err(format!("`{}` exited 2: {}", cmd.join(" "), String::from_utf8_lossy(&stderr)));
            }
            let text = String::from_utf8_lossy(&stdout).replace(&out_dir, "<out>");
            transcript.push((code, text));
        }
        runs.push((snapshot(dir.path()), transcript));
    }
    let files = runs[0].0.len();
    let differing: Vec<&String> =
        runs[0].0.iter().filter(|(k, v)| runs[1].0.get(*k) != Some(v)).map(|(k, _)| k).collect();
    verdict(
        differing.is_empty() && runs[0].0.len() == runs[1].0.len() && runs[0].1 == runs[1].1,
        format!("{} commands, {files} files compared; differing: {differing:?}", commands.len()),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("heat oracle and grid refinement", heat_oracle),
        ("linear-solution examples", examples_reproduced),
        ("martingale-problem suite", martingale_suite),
        ("cross-variation refinement", cross_variation_refines),
        ("nodal structure", nodal_structure),
        ("Hamiltonian identities", hamiltonian_identities),
        ("drift-control experiment", drift_control),
        ("diffusion-control experiment", diffusion_control),
        ("Girsanov consistency", girsanov),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
