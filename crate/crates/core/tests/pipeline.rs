use std::fs;

use wfbsde::io::{decode_bundle, decode_field, encode_field, write_bundle};
use wfbsde::mgcheck::{check_martingale, check_quadratic_variation, MartingaleProcess, DEFAULT_THRESHOLD};
use wfbsde::pde::{solve_quasilinear, SolverOptions, TimeSpaceGrid};
use wfbsde::problem::{problem, Params};
use wfbsde::simulate::{build_fbsde_solution, euler_forward, isometry_gap, terminal_mean, TimeGrid};

#[test]
fn solve_simulate_store_and_check() {
    let coeffs = problem("heat-sin", &Params::new()).unwrap();
    let grid = TimeSpaceGrid::uniform(1.0, 100, 241, -6.0, 6.0).unwrap();
    let field = solve_quasilinear(&coeffs, &grid, &SolverOptions::default()).unwrap();

    // u(0, x) = e^{-1/2} sin x
    let exact = (-0.5f64).exp() * 0.7f64.sin();
    assert!((field.interpolate(0.0, &[0.7], None) - exact).abs() < 1e-3);

    let dir = tempfile::tempdir().unwrap();
    let field_path = dir.path().join("heat.field");
    fs::write(&field_path, encode_field(&field)).unwrap();
    let reloaded = decode_field(&fs::read_to_string(&field_path).unwrap()).unwrap();
    assert_eq!(reloaded, field);

    let paths = TimeGrid::new(1.0, 25).unwrap();
    let bundle = build_fbsde_solution(&reloaded, &coeffs, &[0.7], &paths, 4000, 11).unwrap();
    let bundle_path = dir.path().join("heat.bundle");
    let mut file = fs::File::create(&bundle_path).unwrap();
    write_bundle(&bundle, &mut file).unwrap();
    drop(file);
    let stored = decode_bundle(&fs::read_to_string(&bundle_path).unwrap()).unwrap();
    assert_eq!(stored.x, bundle.x);
    assert_eq!(stored.y, bundle.y);

    for which in [MartingaleProcess::Forward, MartingaleProcess::Backward] {
        let fresh = check_martingale(&bundle, &coeffs, which, DEFAULT_THRESHOLD).unwrap();
        let again = check_martingale(&stored, &coeffs, which, DEFAULT_THRESHOLD).unwrap();
        assert!(fresh.pass, "{fresh:?}");
        assert_eq!(fresh.pass, again.pass);
        assert!((fresh.statistic - again.statistic).abs() < 1e-9);
    }
    assert!(check_quadratic_variation(&stored, &coeffs, DEFAULT_THRESHOLD).unwrap().pass);
}

#[test]
fn brownian_paths_satisfy_the_isometry() {
    let coeffs = problem("heat-2d", &Params::new()).unwrap();
    let grid = TimeGrid::new(2.0, 40).unwrap();
    let bundle = euler_forward(&coeffs, None, &[0.5, -1.0], &grid, 20_000, 5).unwrap();
    let gap = isometry_gap(&bundle, &coeffs);
    assert!(gap.mean.abs() < 4.0 * gap.std_err, "{gap:?}");
    let mean = terminal_mean(&bundle);
    assert!((mean[0] - 0.5).abs() < 0.05 && (mean[1] + 1.0).abs() < 0.05, "{mean:?}");
}

#[test]
fn reports_are_reproducible() {
    let coeffs = problem("heat-x2", &Params::new()).unwrap();
    let grid = TimeSpaceGrid::uniform(1.0, 50, 161, -6.0, 6.0).unwrap();
    let field = solve_quasilinear(&coeffs, &grid, &SolverOptions::default()).unwrap();
    let paths = TimeGrid::new(1.0, 20).unwrap();
    let run = || {
        let b = build_fbsde_solution(&field, &coeffs, &[0.0], &paths, 2000, 99).unwrap();
        check_martingale(&b, &coeffs, MartingaleProcess::Backward, DEFAULT_THRESHOLD).unwrap()
    };
    assert_eq!(run(), run());
}
