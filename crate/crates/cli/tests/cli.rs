use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qstab_cli::{EXIT_CONFIG, EXIT_OK, EXIT_UNMET};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn qstab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qstab"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn cfg(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

#[test]
fn spectrum_reports_the_poschl_teller_levels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = qstab(&["spectrum", "--config", &cfg("pt2.toml"), "--out", out]);
    assert_eq!(run.status.code(), Some(EXIT_OK));
    let summary = json(&dir.path().join("spectrum.json"));
    let values: Vec<f64> = summary["eigenvalues"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(values.len(), 2);
    assert!((values[0] + 4.0).abs() < 1e-4 && (values[1] + 1.0).abs() < 1e-4);
    // raw complex snapshots: header plus 1024 amplitudes
    let bytes = std::fs::metadata(dir.path().join("phi_0.bin"))
        .unwrap()
        .len();
    assert!(bytes >= 1024 * 16);
    assert!(dir.path().join("phi_1.bin").exists());
}

#[test]
fn usage_errors_exit_with_the_configuration_status() {
    assert_eq!(qstab_cli::run(["qstab", "nope"]), EXIT_CONFIG);
    assert_eq!(qstab_cli::run(["qstab", "spectrum"]), EXIT_CONFIG);
    assert_eq!(
        qstab_cli::run(["qstab", "spectrum", "--config", "/nonexistent/qstab.toml"]),
        EXIT_CONFIG
    );
    let pt2 = cfg("pt2.toml");
    assert_eq!(
        qstab_cli::run([
            "qstab",
            "spectrum",
            "--config",
            &pt2,
            "--override",
            "grid.dim=0"
        ]),
        EXIT_CONFIG
    );
    assert_eq!(qstab_cli::run(["qstab", "--help"]), EXIT_OK);
    let run = qstab(&["frobnicate"]);
    assert_eq!(run.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn assumption_report_follows_dipole_parity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let pt2 = cfg("pt2.toml");
    let odd = qstab(&["check-assumptions", "--config", &pt2, "--out", out]);
    assert_eq!(odd.status.code(), Some(EXIT_OK));
    let report = json(&dir.path().join("assumptions.json"));
    assert_eq!(report["assumptions"]["a4_ok"], true);
    assert_eq!(report["decay"]["family"], "poschl_teller");

    let even = qstab(&[
        "check-assumptions",
        "--config",
        &pt2,
        "--out",
        out,
        "--override",
        "dipole.family=\"gaussian_even\"",
    ]);
    assert_eq!(even.status.code(), Some(EXIT_UNMET));
    let report = json(&dir.path().join("assumptions.json"));
    assert_eq!(report["assumptions"]["a4_ok"], false);
}

#[test]
fn short_run_extracts_and_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let replay_dir = dir.path().join("replay");
    let config = cfg("twolevel.toml");
    let overrides = [
        "--override",
        "grid.points_per_axis=256",
        "--override",
        "run.horizon=5.0",
        "--override",
        "propagator.dt=1e-2",
    ];
    let mut args = vec![
        "control",
        "--config",
        &config,
        "--out",
        run_dir.to_str().unwrap(),
    ];
    args.extend(overrides);
    let run = qstab(&args);
    // five time units are far too short to reach the target
    assert_eq!(run.status.code(), Some(EXIT_UNMET), "{run:?}");
    let summary = json(&run_dir.join("summary.json"));
    assert_eq!(summary["completed"], true);
    assert_eq!(summary["steps"], 500);
    let csv = std::fs::read_to_string(run_dir.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,lyapunov,pop_0,pop_1,target_pop,u,"));

    let extract = qstab(&["extract-signal", "--run", run_dir.to_str().unwrap()]);
    assert_eq!(extract.status.code(), Some(EXIT_OK));
    let signal = run_dir.join("signal.csv");
    assert!(signal.exists());

    let mut args = vec![
        "replay",
        "--config",
        &config,
        "--out",
        replay_dir.to_str().unwrap(),
        "--signal",
        signal.to_str().unwrap(),
    ];
    args.extend(overrides);
    let replay = qstab(&args);
    assert_eq!(replay.status.code(), Some(EXIT_OK), "{replay:?}");
    let replayed = json(&replay_dir.join("summary.json"));
    assert_eq!(replayed["open_loop"], true);
    let a = summary["final_target_population"].as_f64().unwrap();
    let b = replayed["final_target_population"].as_f64().unwrap();
    assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
}

#[test]
fn extracting_from_an_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let run = qstab(&["extract-signal", "--run", dir.path().to_str().unwrap()]);
    assert_ne!(run.status.code(), Some(EXIT_OK));
}

#[test]
fn dispersion_probe_fits_the_free_decay() {
    let dir = tempfile::tempdir().unwrap();
    let run = qstab(&[
        "dispersion-probe",
        "--config",
        &cfg("dispersion1d.toml"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(EXIT_OK));
    let fit = json(&dir.path().join("dispersion.json"));
    let slope = fit["slope"].as_f64().unwrap();
    assert!((slope + 0.5).abs() < 0.05, "slope {slope}");
    assert!(fit["contamination_warning"].is_null());
}

#[test]
fn sigma_scan_selects_a_perturbation() {
    let dir = tempfile::tempdir().unwrap();
    let run = qstab(&[
        "sigma-scan",
        "--config",
        &cfg("relaxed.toml"),
        "--out",
        dir.path().to_str().unwrap(),
        "--override",
        "sigma.points=4",
    ]);
    assert_eq!(run.status.code(), Some(EXIT_OK), "{run:?}");
    let report = json(&dir.path().join("sigma_scan.json"));
    assert!(report["selected_sigma"].as_f64().unwrap() > 0.0);
    assert_eq!(report["points"].as_array().unwrap().len(), 4);
    let branches = std::fs::read_to_string(dir.path().join("sigma_branches.csv")).unwrap();
    assert!(branches.starts_with("sigma,branch,eigenvalue\n"));
    // three states at σ = 0 plus three per scan point
    assert_eq!(branches.lines().count(), 1 + 3 * 5);
}
