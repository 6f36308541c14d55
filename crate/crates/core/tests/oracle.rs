//! Closed-form references for the linear and Gibbs Hamiltonian systems.

use ibplab::harness::config::ExperimentConfig;
use ibplab::harness::experiment::run_oracle;

fn load(name: &str) -> ExperimentConfig {
    let path = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap()
}

// Q = diag(1, 2), λ = (1, 4): C = blockdiag((2Q)^{-1}, (2Λ)^{-1})
#[test]
fn linear_lyapunov_covariance_is_half_the_displayed_one() {
    let report = run_oracle(&load("invariance_linear.json")).unwrap();
    assert!(report.passed);
    let cov = &report.data["oracle"]["lyapunov_cov"];
    let expected = [0.5, 0.25, 0.5, 0.125];
    for (i, e) in expected.iter().enumerate() {
        let v = cov[i][i].as_f64().unwrap();
        assert!((v - e).abs() < 1e-12, "C[{i}][{i}] = {v}");
    }
    assert!(report.notes.iter().any(|n| n.contains("displayed_gaussian") && n.contains("NOT stationary")));
}

#[test]
fn derived_gibbs_density_is_stationary_and_displayed_is_not() {
    let report = run_oracle(&load("hamiltonian_gibbs.json")).unwrap();
    let derived = report.checks.iter().find(|c| c.name == "fp_residual_derived_gibbs").unwrap();
    assert!(derived.pass && derived.value < 1e-8);
    assert!(report.notes.iter().any(|n| n.contains("displayed_gibbs") && n.contains("NOT stationary")));
}
