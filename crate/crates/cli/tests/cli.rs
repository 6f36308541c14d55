use std::path::PathBuf;
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn ibplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ibplab"))
        .args(args)
        .env("IBPLAB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn check_config_accepts_shipped_configs() {
    for name in ["ou.json", "sine4.json", "hamiltonian_gibbs.json", "delay.json", "invariance_linear.json"] {
        let path = config(name);
        let o = ibplab(&["check-config", "--config", path.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
        let line = String::from_utf8(o.stdout).unwrap();
        assert!(line.starts_with("ok model="), "{line}");
        assert!(line.contains("hash="));
    }
}

#[test]
fn missing_config_is_a_config_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = ibplab(&[
        "ibp-semilinear",
        "--config",
        "/nonexistent/config.json",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("level=error kind=config"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_fields_and_wrong_subcommand_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"model": "semilinear", "operator": {"n": 1}, "bogus": 1}"#).unwrap();
    assert_eq!(ibplab(&["check-config", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let ou = config("ou.json");
    let o = ibplab(&["ibp-hamiltonian", "--config", ou.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("semilinear"));
}

#[test]
fn semilinear_run_writes_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let ou = config("ou.json");
    let json_dir = dir.path().join("json");
    let common = ["--paths", "4000", "--dt-steps", "64", "--config", ou.to_str().unwrap()];
    let mut args = vec!["ibp-semilinear", "--out", json_dir.to_str().unwrap()];
    args.extend(common);
    let o = ibplab(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(json_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], "ibplab-report/1");
    assert_eq!(report["paths"], 4000);
    assert_eq!(report["steps"], 64);
    assert_eq!(report["passed"], true);

    let csv_dir = dir.path().join("csv");
    let mut args = vec!["ibp-semilinear", "--format", "csv", "--out", csv_dir.to_str().unwrap()];
    args.extend(common);
    assert_eq!(ibplab(&args).status.code(), Some(0));
    let table = std::fs::read_to_string(csv_dir.join("report.csv")).unwrap();
    assert!(table.starts_with("function,"));
    assert_eq!(table.lines().count(), 3);
    assert!(csv_dir.join("checks.csv").exists());
}

#[test]
fn thread_count_does_not_change_stdout() {
    let ou = config("ou.json");
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_ibplab"))
            .args(["ibp-semilinear", "--paths", "3000", "--dt-steps", "32", "--config", ou.to_str().unwrap()])
            .env("IBPLAB_THREADS", threads)
            .output()
            .unwrap()
            .stdout
    };
    assert_eq!(run("1"), run("7"));
}

#[test]
fn oracle_reports_lyapunov_covariance() {
    let path = config("invariance_linear.json");
    let o = ibplab(&["oracle", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["command"], "oracle");
    assert_eq!(report["data"]["oracle"]["lyapunov_cov"][0][0], 0.5);
    assert!(stderr(&o).contains("NOT stationary"));
}

#[test]
fn failed_checks_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fomin_ou.json");
    std::fs::write(
        &cfg,
        r#"{"model": "fomin", "operator": {"n": 1, "eigenvalues": [1.0]}, "direction": {"k": [1.0]},
            "steps": 128, "sampler": {"samples": 1000},
            "functions": [{"name": "x", "outer": "linear", "projections": [[1.0]]}]}"#,
    )
    .unwrap();
    let o = ibplab(&["fomin", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("kind=check"));
}

#[test]
fn plot_emits_svg() {
    let dir = tempfile::tempdir().unwrap();
    let path = config("hamiltonian_gibbs.json");
    let o = ibplab(&["plot", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let svg = std::fs::read_to_string(dir.path().join("ingredients.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(ibplab(&["plot"]).status.code(), Some(2));
}
