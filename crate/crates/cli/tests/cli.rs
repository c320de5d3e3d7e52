use std::path::Path;
use std::process::{Command, Output};

use kdvlab_cli::artifacts::{emit_csv, read_csv, Table};

fn kdvlab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdvlab"))
        .args(args)
        .arg("--output-dir")
        .arg(out)
        .env_remove("KDVLAB_THREADS")
        .output()
        .expect("binary runs")
}

#[test]
fn critical_lengths_start_at_pi() {
    let dir = tempfile::tempdir().unwrap();
    let o = kdvlab(&["critical-lengths", "--beta", "0", "--lmax", "10"], dir.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let first = &v[0];
    assert!((first["value"].as_f64().unwrap() - std::f64::consts::PI).abs() < 1e-12);
    assert_eq!(first["modes"][0]["family"], "B");
    assert_eq!(first["modes"][0]["k"], 1);
    assert!(dir.path().join("critical_lengths.json").exists());
}

#[test]
fn unreachable_target_exits_with_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = kdvlab(&["control", "--beta", "0", "--L", "3.14159265", "--target", "cos"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unreachable"));
    let meta: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("control.json")).unwrap()).unwrap();
    assert_eq!(meta["error"], "NearCriticalTarget");
}

#[test]
fn degenerate_advection_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = kdvlab(&["critical-lengths", "--beta", "-1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = kdvlab(&["gramian", "--set", "betta=1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("valid keys") && err.contains("reg_eps"), "{err}");
    assert_eq!(kdvlab(&["sweep", "--bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(kdvlab(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(kdvlab(&["control", "--ctrl", "h3"], dir.path()).status.code(), Some(2));
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_kdvlab"))
        .args(["critical-lengths", "--output-dir"])
        .arg(dir.path())
        .env("KDVLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(2));
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for sub in [
        "critical-lengths",
        "spectral-check",
        "simulate",
        "adjoint",
        "kernel-eval",
        "gramian",
        "control",
        "nonlinear-control",
        "sweep",
        "accept",
    ] {
        let o = kdvlab(&[sub, "--help"], dir.path());
        assert!(o.status.success(), "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("--"), "{sub}");
    }
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small grid\nN = 32\nM = 100\nL = 3.0\n").unwrap();
    let o = kdvlab(&["simulate", "--config", cfg.to_str().unwrap(), "--set", "L=2.5", "--M", "80"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meta: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(meta["config"]["n"], 32);
    assert_eq!(meta["config"]["m"], 80);
    assert_eq!(meta["config"]["l"], 2.5);
}

#[test]
fn artifacts_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["simulate", "--N", "32", "--M", "100", "--u0", "0.1*random", "--h2", "0.2*random", "--set", "seed=9"];
    assert!(kdvlab(&args, a.path()).status.success());
    assert!(kdvlab(&args, b.path()).status.success());
    let fa = std::fs::read(a.path().join("simulate.csv")).unwrap();
    let fb = std::fs::read(b.path().join("simulate.csv")).unwrap();
    assert!(!fa.is_empty());
    assert_eq!(fa, fb);
}

#[test]
fn sweep_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = kdvlab(&["sweep", "--N", "32", "--M", "150", "--lengths", "1.5,2.0,pi"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let back = read_csv(&dir.path().join("sweep.csv")).unwrap();
    assert_eq!(back.header, ["L", "N", "modes", "lambda_min", "lambda_max", "condition", "asymmetry"]);
    assert_eq!(back.rows.len(), 3);
    for (row, js) in back.rows.iter().zip(rows.as_array().unwrap()) {
        assert_eq!(row[3].to_bits(), js["lambda_min"].as_f64().unwrap().to_bits());
        assert_eq!(row[0].to_bits(), js["l"].as_f64().unwrap().to_bits());
    }
    let again = dir.path().join("again.csv");
    emit_csv(&back, &again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(dir.path().join("sweep.csv")).unwrap());
}

#[test]
fn csv_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("nested/empty.csv");
    emit_csv(&Table::new(["a", "b"]), &p).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "a,b\n");
    let mut t = Table::new(["v"]);
    t.push(vec![0.1 + 0.2]);
    let q = dir.path().join("one.csv");
    emit_csv(&t, &q).unwrap();
    assert_eq!(read_csv(&q).unwrap(), t);
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers.len(), 2, "{leftovers:?}");
}

#[test]
fn quick_subcommands_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let runs: [(&[&str], &str); 5] = [
        (&["spectral-check", "--L", "pi", "--p-min=-0.5", "--p-max", "0.5", "--samples", "200"], "spectral_mode.csv"),
        (&["adjoint", "--L", "pi", "--N", "32", "--M", "100"], "adjoint_traces.csv"),
        (&["gramian", "--N", "32", "--M", "150", "--ctrl", "h2,h3"], "gramian_spectrum.csv"),
        (&["control", "--N", "64", "--M", "500"], "control_signals.csv"),
        (&["kernel-eval", "--N", "32", "--M", "400", "--rho-max", "8", "--out-steps", "8", "--compare-fd"], "kernel_eval.csv"),
    ];
    for (args, file) in runs {
        let o = kdvlab(args, dir.path());
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(dir.path().join(file).exists(), "{file}");
    }
    let o = kdvlab(&["nonlinear-control", "--N", "64", "--M", "500"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meta: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(meta["iterations"].as_u64().unwrap() <= 12);
}
