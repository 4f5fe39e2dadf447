use std::fs;
use std::path::Path;

use wfbsde_cli::run;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn wfbsde(out: &Path, args: &[&str]) -> Run {
    let mut argv = vec!["wfbsde".to_string(), "--out".into(), out.display().to_string()];
    argv.extend(args.iter().map(|a| a.replace("{out}", &out.display().to_string())));
    let (mut stdout, mut stderr) = (Vec::new(), Vec::new());
    let code = run(argv, &mut stdout, &mut stderr);
    Run { code, stdout: String::from_utf8(stdout).unwrap(), stderr: String::from_utf8(stderr).unwrap() }
}

#[test]
fn catalog_lists_problems() {
    let dir = tempfile::tempdir().unwrap();
    let r = wfbsde(dir.path(), &["catalog"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    for id in ["heat-x2", "example-2.1", "barlow", "tsirelson", "drift-k"] {
        assert!(r.stdout.contains(id), "missing {id}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(wfbsde(dir.path(), &["solve"]).code, 2);
    assert_eq!(wfbsde(dir.path(), &["solve", "--problem", "no-such-problem"]).code, 2);
    assert_eq!(wfbsde(dir.path(), &["solve", "--problem", "heat-x2", "--grid", "10,abc,0,1"]).code, 2);
    assert_eq!(wfbsde(dir.path(), &["frobnicate"]).code, 2);
    let missing = wfbsde(dir.path(), &["verify", "--problem", "heat-x2", "--bundle", "{out}/absent.bundle"]);
    assert_eq!(missing.code, 2);
    assert!(missing.stderr.contains("absent.bundle"), "{}", missing.stderr);
}

#[test]
fn solve_simulate_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(wfbsde(out, &["solve", "--problem", "heat-x2", "--grid", "50,161,-6,6"]).code, 0);
    assert!(out.join("heat-x2.field").exists() && out.join("heat-x2.solve.json").exists());

    let sim = [
        "simulate",
        "--problem",
        "heat-x2",
        "--field",
        "{out}/heat-x2.field",
        "--paths",
        "2000",
        "--seed",
        "3",
        "--dt",
        "0.05",
    ];
    assert_eq!(wfbsde(out, &sim).code, 0);
    let bundle = fs::read(out.join("heat-x2.bundle")).unwrap();
    assert_eq!(wfbsde(out, &sim).code, 0);
    assert_eq!(fs::read(out.join("heat-x2.bundle")).unwrap(), bundle, "same seed, same bundle");

    let verify =
        ["verify", "--problem", "heat-x2", "--bundle", "{out}/heat-x2.bundle", "--field", "{out}/heat-x2.field"];
    let clean = wfbsde(out, &verify);
    assert_eq!(clean.code, 0, "{}{}", clean.stdout, clean.stderr);
    let report = fs::read_to_string(out.join("heat-x2.verify.json")).unwrap();
    assert!(report.contains("\"pass\": true"));

    let mut corrupted = verify.to_vec();
    corrupted.extend(["--checks", "mx", "--inject-drift", "2.0"]);
    assert_eq!(wfbsde(out, &corrupted).code, 1);
}

#[test]
fn nodal_interval_passes() {
    let dir = tempfile::tempdir().unwrap();
    let r = wfbsde(dir.path(), &["verify", "--problem", "example-2.1", "--nodal", "0,0", "--levels", "5,10"]);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    assert!(dir.path().join("example-2.1.nodal.json").exists());
}

#[test]
fn config_file_drives_a_run_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-config");
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        format!(
            "problem = \"heat-sin\"\nseed = 4\noutput = \"{}\"\n\n[grid]\nn_t = 20\nn_x = 81\nlo = -4\nhi = 4\n\n[simulation]\npaths = 300\ndt = 0.1\n",
            target.display()
        ),
    )
    .unwrap();
    let config = config.display().to_string();

    let mut argv = vec!["wfbsde", "solve", "--config", &config];
    let mut sink = (Vec::new(), Vec::new());
    assert_eq!(run(argv.clone(), &mut sink.0, &mut sink.1), 0);
    assert!(target.join("heat-sin.field").exists());

    let flagged = dir.path().join("flagged");
    let flagged_str = flagged.display().to_string();
    argv.extend(["--out", &flagged_str]);
    argv[1] = "simulate";
    assert_eq!(run(argv, &mut sink.0, &mut sink.1), 0);
    assert!(flagged.join("heat-sin.bundle").exists());
    assert!(!target.join("heat-sin.bundle").exists());
}

#[test]
fn malformed_config_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "problem = \"heat-x\"\nseed = 1\nunknown_key = 3\n").unwrap();
    let r = wfbsde(dir.path(), &["solve", "--config", &config.display().to_string()]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("line 3"), "{}", r.stderr);
}

#[test]
fn hamiltonian_probes_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let r = wfbsde(dir.path(), &["control", "hamiltonians", "--problem", "drift-k", "--probes", "50"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let table = fs::read_to_string(dir.path().join("hamiltonians-drift-k.tsv")).unwrap();
    assert_eq!(table.lines().count(), 51);
}
