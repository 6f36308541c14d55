//! Experiment runners: one per subcommand, each returning a finished report
//! plus optional CSV tables.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::drift::{GibbsGradient, PhaseBlock, SegmentView};
use crate::error::{Error, Result};
use crate::harness::config::{with_constant, ExperimentConfig, Model, ModelClass, ReferenceKind, Setup};
use crate::harness::cylinder::CylinderFunction;
use crate::harness::reduce::{run_paths, Estimate, Reduced};
use crate::harness::report::{CheckResult, FunctionReport, McReport};
use crate::harness::rng::{rng_for_path, Domain};
use crate::measures::{
    closability_chain_check, contraction_check, empirical_covariance, fomin_check, fp_residual, linear_part,
    lyapunov_stationary_cov, phase_grid, sample_invariant, stationarity_check, ContractionReport, Dynamics,
    ErgodicSampler, FpResidual, GaussianReference, GibbsReference, GradientLogDensity, LogDensity,
    QuadraticLogDensity,
};
use crate::quad::integrate_adaptive;
use crate::simulate::{
    constant_segment, delay_lags, simulate_delay, simulate_hamiltonian, simulate_semilinear, HamiltonianSystem,
    NoisePath, SimGrid,
};
use crate::spectral::{SigmaOperator, SpectralOperator};
use crate::weights::{
    default_phi_psi, delay_girsanov_integrand, delay_ingredients, delay_weight_along, girsanov_density, growth,
    ham_h_theta, hamiltonian_girsanov_integrand, hamiltonian_weight, semilinear_weight, DelayIngredients,
    EigenDirection, HamDirection, HamIngredients, SegmentChoice,
};

/// A CSV artifact produced next to the report.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: McReport,
    pub tables: Vec<Table>,
}

impl From<McReport> for RunOutput {
    fn from(report: McReport) -> Self {
        Self {
            report,
            tables: Vec::new(),
        }
    }
}

/// Dispatch on `cfg.model`.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<RunOutput> {
    match cfg.model {
        ModelClass::Semilinear | ModelClass::Hamiltonian | ModelClass::Delay => run_ibp_experiment(cfg, workers),
        ModelClass::Invariance => run_invariance(cfg, workers),
        ModelClass::Fomin => run_fomin(cfg, workers).map(Into::into),
        ModelClass::Contraction => run_contraction(cfg, workers).map(Into::into),
    }
}

fn new_report(cfg: &ExperimentConfig, command: &str, dt: f64) -> McReport {
    McReport::new(command, cfg.hash(), cfg.seed, cfg.paths, cfg.steps, dt)
}

/// Columns `3r..3r+3` hold `(a, b, a − b)` for function `r`; `extra`
/// columns follow.
fn function_reports(
    cfg: &ExperimentConfig,
    funcs: &[CylinderFunction],
    coarse: &Reduced,
    fine: Option<&Reduced>,
    dt: f64,
) -> Vec<FunctionReport> {
    let tol = &cfg.tolerances;
    funcs
        .iter()
        .enumerate()
        .map(|(r, f)| {
            let (a, b, d) = (coarse.stats(3 * r), coarse.stats(3 * r + 1), coarse.stats(3 * r + 2));
            let denom = a.variance + b.variance;
            let ratio = if denom > 0.0 { d.variance / denom } else { 0.0 };
            FunctionReport::new(
                f.name.clone(),
                a.into(),
                b.into(),
                d.into(),
                ratio,
                dt,
                fine.map(|g| g.stats(3 * r + 2).into()),
                tol.z_max,
                tol.kappa_min,
            )
        })
        .collect()
}

fn push_triple(out: &mut Vec<f64>, a: f64, b: f64) {
    out.extend([a, b, a - b]);
}

/// Paired IBP identity for the configured model class.
pub fn run_ibp_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<RunOutput> {
    let setup = cfg.build()?;
    match &setup.model {
        Model::Semilinear { .. } => semilinear_ibp(cfg, &setup, workers),
        Model::Hamiltonian { .. } => hamiltonian_ibp(cfg, &setup, workers),
        Model::Delay { .. } => delay_ibp(cfg, &setup, workers),
    }
}

fn semilinear_ibp(cfg: &ExperimentConfig, setup: &Setup, workers: usize) -> Result<RunOutput> {
    let Model::Semilinear { drift, k, x0 } = &setup.model else {
        unreachable!()
    };
    let k = k.as_ref().ok_or_else(|| Error::Config("semilinear model needs direction.k".into()))?;
    let (op, sig) = (&setup.op, &setup.sig);
    let n = op.dim();
    let funcs = with_constant(setup.functions.clone());
    let nf = funcs.len();
    let run = |refine: bool| -> Result<Reduced> {
        let grid = if refine { setup.grid.refined() } else { setup.grid };
        run_paths(cfg.paths, 3 * nf + 2, workers, |i, out| {
            let mut noise = NoisePath::generate(cfg.seed, i, n, &setup.grid);
            if refine {
                noise = noise.refine();
            }
            let path = simulate_semilinear(x0, op, sig, drift.as_ref(), &grid, &noise, None)?;
            let m = semilinear_weight(&path, &noise, k, drift.as_ref(), sig, op)?;
            let xt = path.terminal();
            for f in &funcs {
                push_triple(out, f.dderiv(xt, k.coeffs()), f.eval(xt) * m);
            }
            out.extend([m, m * m]);
            Ok(())
        })
    };
    let coarse = run(false)?;
    let fine = if cfg.tolerances.richardson { Some(run(true)?) } else { None };
    let dt = setup.grid.dt();
    let mut report = new_report(cfg, "ibp-semilinear", dt);
    report.functions = function_reports(cfg, &funcs, &coarse, fine.as_ref(), dt);
    let z_max = cfg.tolerances.z_max;
    let m1: Estimate = coarse.stats(3 * nf).into();
    let m2: Estimate = coarse.stats(3 * nf + 1).into();
    report.checks.push(CheckResult::within_se("weight_mean_zero", &m1, 0.0, z_max));
    let bound = crate::weights::fh_bound(k, drift.as_ref(), sig, op, setup.grid.horizon())?;
    report.checks.push(CheckResult::at_most(
        "weight_second_moment_bound",
        m2.mean,
        bound + z_max * m2.se,
        format!("E[M^2] against the a-priori bound {bound:.6e}"),
    ));
    if drift.name() == "zero" {
        let exact = ito_isometry(k, op, sig, setup.grid.horizon())?;
        report.checks.push(CheckResult::within_se("weight_second_moment_isometry", &m2, exact, z_max));
        report.insert("weight_second_moment_exact", &exact);
    }
    report.insert("weight_mean", &m1);
    report.insert("weight_second_moment", &m2);
    Ok(report.finish().into())
}

/// `E[M²] = T |σ^{-1} Σ_i c_i e_i / g_i(T)|²` when the drift vanishes.
pub fn ito_isometry(k: &EigenDirection, op: &SpectralOperator, sig: &SigmaOperator, horizon: f64) -> Result<f64> {
    let v: Vec<f64> = k
        .coeffs()
        .iter()
        .zip(op.eigenvalues())
        .map(|(c, l)| c / growth(-l, horizon))
        .collect();
    Ok(horizon * sig.inverse()?.inv_norm_sq(&v))
}

#[derive(Debug, Clone, Serialize)]
struct GirsanovSummary {
    eps: f64,
    density_mean: Estimate,
    /// RMS of `(1 − R_ε)/ε − M`.
    defect_rms: f64,
    clamped: u64,
}

/// Checks `E[R_ε] = 1` for each ε, and an O(ε) slope of the defect over
/// the first two.
fn girsanov_checks(report: &mut McReport, cfg: &ExperimentConfig, coarse: &Reduced, offset: usize) {
    let eps = &cfg.girsanov.eps;
    let mut rows = Vec::new();
    for (e, &eps) in eps.iter().enumerate() {
        let c = offset + 3 * e;
        let r: Estimate = coarse.stats(c).into();
        let sq = coarse.stats(c + 1).mean;
        let clamped = coarse.column(c + 2).filter(|v| *v > 0.0).count() as u64;
        report.checks.push(CheckResult::within_se(
            format!("girsanov_density_mean_eps_{eps}"),
            &r,
            1.0,
            cfg.tolerances.z_max,
        ));
        rows.push(GirsanovSummary {
            eps,
            density_mean: r,
            defect_rms: sq.sqrt(),
            clamped,
        });
    }
    if rows.len() >= 2 && rows[0].defect_rms > 0.0 && rows[1].defect_rms > 0.0 {
        let slope = (rows[0].defect_rms / rows[1].defect_rms).ln() / (rows[0].eps / rows[1].eps).ln();
        report.checks.push(CheckResult::at_most(
            "girsanov_defect_order",
            (slope - 1.0).abs(),
            0.3,
            format!("observed order {slope:.4} in eps"),
        ));
    }
    if rows.iter().any(|r| r.clamped > 0) {
        report.notes.push("some Girsanov exponents hit the clamp".into());
    }
    report.insert("girsanov", &rows);
}

fn girsanov_eps(cfg: &ExperimentConfig) -> Vec<f64> {
    if cfg.girsanov.enabled {
        cfg.girsanov.eps.clone()
    } else {
        Vec::new()
    }
}

/// `(φ, ψ)` defaults and tabulated `h', h̃, Θ` on `grid`.
pub fn hamiltonian_ingredients(dir: &HamDirection, grid: &SimGrid) -> Result<HamIngredients> {
    let (t1, t2) = dir.thetas();
    let pp = default_phi_psi(grid.horizon(), t1, t2)?;
    ham_h_theta(&pp, dir, grid)
}

fn hamiltonian_ibp(cfg: &ExperimentConfig, setup: &Setup, workers: usize) -> Result<RunOutput> {
    let Model::Hamiltonian {
        coupling,
        drift,
        direction,
        x0,
        y0,
        ..
    } = &setup.model
    else {
        unreachable!()
    };
    let dir = direction
        .as_ref()
        .ok_or_else(|| Error::Config("hamiltonian model needs direction.k1 and direction.k2".into()))?;
    let sys = HamiltonianSystem {
        coupling,
        op: &setup.op,
        sig: &setup.sig,
        drift: drift.as_ref(),
    };
    let d = setup.op.dim();
    let k = dir.stacked();
    let funcs = with_constant(setup.functions.clone());
    let nf = funcs.len();
    let eps = girsanov_eps(cfg);
    let run = |refine: bool| -> Result<Reduced> {
        let grid = if refine { setup.grid.refined() } else { setup.grid };
        let ing = hamiltonian_ingredients(dir, &grid)?;
        let eps: &[f64] = if refine { &[] } else { &eps };
        let shifts: Vec<_> = eps.iter().map(|e| ing.shift(*e)).collect();
        run_paths(cfg.paths, 3 * nf + 2 + 3 * eps.len(), workers, |i, out| {
            let mut noise = NoisePath::generate(cfg.seed, i, d, &setup.grid);
            if refine {
                noise = noise.refine();
            }
            let path = simulate_hamiltonian(x0, y0, &sys, &grid, &noise, None)?;
            let m = hamiltonian_weight(&path, &noise, &ing, drift.as_ref(), &setup.sig)?;
            let zt = path.terminal();
            for f in &funcs {
                push_triple(out, f.dderiv(zt, &k), f.eval(zt) * m);
            }
            out.extend([m, m * m]);
            for (shift, e) in shifts.iter().zip(eps) {
                let shifted = simulate_hamiltonian(x0, y0, &sys, &grid, &noise, Some((shift, &path)))?;
                let xi = hamiltonian_girsanov_integrand(&path, &shifted, &ing, *e, drift.as_ref())?;
                let r = girsanov_density(&noise, &xi, &setup.sig)?;
                let defect = (1.0 - r.value) / e - m;
                out.extend([r.value, defect * defect, f64::from(u8::from(r.clamped))]);
            }
            Ok(())
        })
    };
    let coarse = run(false)?;
    let fine = if cfg.tolerances.richardson { Some(run(true)?) } else { None };
    let dt = setup.grid.dt();
    let mut report = new_report(cfg, "ibp-hamiltonian", dt);
    report.functions = function_reports(cfg, &funcs, &coarse, fine.as_ref(), dt);
    let m1: Estimate = coarse.stats(3 * nf).into();
    report
        .checks
        .push(CheckResult::within_se("weight_mean_zero", &m1, 0.0, cfg.tolerances.z_max));
    report.insert("weight_mean", &m1);
    report.insert("weight_second_moment", &Estimate::from(coarse.stats(3 * nf + 1)));
    report.insert("thetas", &dir.thetas());
    if !eps.is_empty() {
        girsanov_checks(&mut report, cfg, &coarse, 3 * nf + 2);
    }
    let ing = hamiltonian_ingredients(dir, &setup.grid)?;
    let mut buf = Vec::new();
    ing.write_csv(&mut buf)?;
    Ok(RunOutput {
        report: report.finish(),
        tables: vec![Table {
            name: "ingredients.csv".into(),
            bytes: buf,
        }],
    })
}

fn delay_ibp(cfg: &ExperimentConfig, setup: &Setup, workers: usize) -> Result<RunOutput> {
    let Model::Delay {
        drift,
        direction,
        tau,
        x0,
    } = &setup.model
    else {
        unreachable!()
    };
    let dir = direction
        .as_ref()
        .ok_or_else(|| Error::Config("delay model needs direction.eta".into()))?;
    let (op, sig) = (&setup.op, &setup.sig);
    let n = op.dim();
    let choice: SegmentChoice = cfg.delay.segment.into();
    let funcs = with_constant(setup.functions.clone());
    let nf = funcs.len();
    let eps = girsanov_eps(cfg);
    let eta = |theta: f64| dir.eta(theta);
    let run = |refine: bool| -> Result<Reduced> {
        let grid = if refine { setup.grid.refined() } else { setup.grid };
        let ing = delay_ingredients(dir, op, &grid, *tau)?;
        let lags = delay_lags(*tau, grid.dt())?;
        let init = constant_segment(x0, lags);
        let xi0 = SegmentView::new(&init, n, grid.dt());
        let eps: &[f64] = if refine { &[] } else { &eps };
        let shifts: Vec<_> = eps.iter().map(|e| ing.shift(*e)).collect();
        run_paths(cfg.paths, 3 * nf + 2 + 3 * eps.len(), workers, |i, out| {
            let mut noise = NoisePath::generate(cfg.seed, i, n, &setup.grid);
            if refine {
                noise = noise.refine();
            }
            let path = simulate_delay(&xi0, op, sig, drift.as_ref(), &grid, *tau, &noise, None)?;
            let m = delay_weight_along(&path, &noise, &ing, drift.as_ref(), sig, choice)?;
            let seg = path.terminal_segment();
            for f in &funcs {
                push_triple(out, f.dderiv_segment(&seg, &eta), f.eval_segment(&seg) * m);
            }
            out.extend([m, m * m]);
            for (shift, e) in shifts.iter().zip(eps) {
                let shifted = simulate_delay(&xi0, op, sig, drift.as_ref(), &grid, *tau, &noise, Some((shift, &path)))?;
                let xi = delay_girsanov_integrand(&path, &shifted, &ing, *e, drift.as_ref())?;
                let r = girsanov_density(&noise, &xi, sig)?;
                let defect = (1.0 - r.value) / e - m;
                out.extend([r.value, defect * defect, f64::from(u8::from(r.clamped))]);
            }
            Ok(())
        })
    };
    let coarse = run(false)?;
    let fine = if cfg.tolerances.richardson { Some(run(true)?) } else { None };
    let dt = setup.grid.dt();
    let mut report = new_report(cfg, "ibp-delay", dt);
    report.functions = function_reports(cfg, &funcs, &coarse, fine.as_ref(), dt);
    let m1: Estimate = coarse.stats(3 * nf).into();
    report
        .checks
        .push(CheckResult::within_se("weight_mean_zero", &m1, 0.0, cfg.tolerances.z_max));
    report.insert("weight_mean", &m1);
    report.insert("weight_second_moment", &Estimate::from(coarse.stats(3 * nf + 1)));
    if !eps.is_empty() {
        girsanov_checks(&mut report, cfg, &coarse, 3 * nf + 2);
    }
    let ing: DelayIngredients = delay_ingredients(dir, op, &setup.grid, *tau)?;
    report.insert("segment_choice", &format!("{:?}", cfg.delay.segment));
    report.insert("plain_integral_discrepancy", &ing.plain_discrepancy());
    report.insert("eta_c1_norm", &dir.c1_norm(op, *tau));
    let mut buf = Vec::new();
    ing.write_csv(&mut buf)?;
    Ok(RunOutput {
        report: report.finish(),
        tables: vec![Table {
            name: "ingredients.csv".into(),
            bytes: buf,
        }],
    })
}

/// Dynamics object for a built model.
pub fn dynamics_of(setup: &Setup) -> Dynamics {
    match &setup.model {
        Model::Semilinear { drift, .. } => Dynamics::Semilinear {
            op: setup.op.clone(),
            sig: setup.sig.clone(),
            drift: drift.clone(),
        },
        Model::Hamiltonian { coupling, drift, .. } => Dynamics::Hamiltonian {
            coupling: coupling.clone(),
            op: setup.op.clone(),
            sig: setup.sig.clone(),
            drift: drift.clone(),
        },
        Model::Delay { drift, tau, .. } => Dynamics::Delay {
            op: setup.op.clone(),
            sig: setup.sig.clone(),
            drift: drift.clone(),
            tau: *tau,
        },
    }
}

fn initial_state(setup: &Setup, dt: f64) -> Result<Vec<f64>> {
    Ok(match &setup.model {
        Model::Semilinear { x0, .. } => x0.clone(),
        Model::Hamiltonian { x0, y0, .. } => x0.iter().chain(y0).copied().collect(),
        Model::Delay { x0, tau, .. } => constant_segment(x0, delay_lags(*tau, dt)?),
    })
}

fn sampler_for(cfg: &ExperimentConfig, setup: &Setup, seed: u64) -> Result<ErgodicSampler> {
    let s = &cfg.sampler;
    let mut sampler = ErgodicSampler::new(dynamics_of(setup), initial_state(setup, s.dt)?, s.dt, s.samples, seed);
    sampler.chains = s.chains;
    if let Some(b) = s.burn_in {
        sampler.burn_in = b;
    }
    if let Some(g) = s.gap {
        sampler.gap = g;
    }
    Ok(sampler)
}

/// Full-state linear dynamics `(F, S)` of a configuration with linear drift.
pub fn linear_system(setup: &Setup) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    match &setup.model {
        Model::Hamiltonian { coupling, drift, .. } => {
            crate::measures::hamiltonian_linear_matrices(&HamiltonianSystem {
                coupling,
                op: &setup.op,
                sig: &setup.sig,
                drift: drift.as_ref(),
            })
        }
        Model::Semilinear { drift, .. } => {
            let (jac, nonlin) = linear_part(drift.as_ref());
            if nonlin > 1e-10 * (1.0 + jac.norm()) {
                return Err(Error::Config(format!("drift `{}` is not linear", drift.name())));
            }
            let f = jac - DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(setup.op.eigenvalues()));
            Ok((f, setup.sig.matrix().clone()))
        }
        Model::Delay { .. } => Err(Error::Config("no Lyapunov reference for delay models".into())),
    }
}

/// Lyapunov covariance, FP residuals of every candidate density, and the
/// verdicts on the closed-form candidates.
#[derive(Debug, Clone, Serialize)]
pub struct OracleOutcome {
    pub lyapunov_cov: Option<Vec<Vec<f64>>>,
    pub lyapunov_residual: Option<f64>,
    pub residuals: Vec<FpResidual>,
    pub side_condition: Option<f64>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// `∫₀¹ ‖e^{tA} A^{-1}Q‖ dt` for a linear position drift `b = A^{-1}Q x`.
pub fn side_condition(op: &SpectralOperator, drift_matrix: &DMatrix<f64>) -> f64 {
    integrate_adaptive(
        |t| {
            let scaled = DMatrix::from_fn(drift_matrix.nrows(), drift_matrix.ncols(), |i, j| {
                (-t * op.eigenvalues()[i]).exp() * drift_matrix[(i, j)]
            });
            scaled.singular_values().max()
        },
        0.0,
        1.0,
        1e-10,
    )
}

/// Runs the Lyapunov and Fokker–Planck deciders. Only checks that must hold
/// (agreement of derived candidates) are recorded as checks; closed-form
/// candidates that fail are recorded as notes.
pub fn run_oracle(cfg: &ExperimentConfig) -> Result<McReport> {
    let setup = cfg.build()?;
    let (outcome, checks, notes) = oracle_outcome(cfg, &setup)?;
    let mut report = new_report(cfg, "oracle", setup.grid.dt());
    report.checks = checks;
    report.notes = notes;
    report.insert("oracle", &outcome);
    Ok(report.finish())
}

fn oracle_outcome(cfg: &ExperimentConfig, setup: &Setup) -> Result<(OracleOutcome, Vec<CheckResult>, Vec<String>)> {
    let tol = cfg.invariance.residual_tol;
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    let mut out = OracleOutcome {
        lyapunov_cov: None,
        lyapunov_residual: None,
        residuals: Vec::new(),
        side_condition: None,
    };
    let lyap = match linear_system(setup) {
        Ok((f, s)) => {
            let sol = lyapunov_stationary_cov(&f, &s)?;
            checks.push(CheckResult::at_most(
                "lyapunov_residual",
                sol.residual,
                1e-10 * (1.0 + sol.cov.norm()),
                "",
            ));
            out.lyapunov_cov = Some(rows(&sol.cov));
            out.lyapunov_residual = Some(sol.residual);
            Some(sol)
        }
        Err(_) => None,
    };
    let Model::Hamiltonian {
        coupling,
        drift,
        inner,
        ..
    } = &setup.model
    else {
        return Ok((out, checks, notes));
    };
    let (p, d) = (coupling.nrows(), setup.op.dim());
    if p + d > 4 {
        notes.push(format!("phase dimension {} too large for the residual grid", p + d));
        return Ok((out, checks, notes));
    }
    let sys = HamiltonianSystem {
        coupling,
        op: &setup.op,
        sig: &setup.sig,
        drift: drift.as_ref(),
    };
    let grid = phase_grid(p + d, cfg.invariance.grid_half_width, cfg.invariance.grid_per_axis);
    let standard = coupling.clone() == DMatrix::identity(p, d) && setup.sig.matrix().clone() == DMatrix::identity(d, d);
    let mut candidates: Vec<(Box<dyn LogDensity>, bool)> = Vec::new();
    if let Some(sol) = &lyap {
        candidates.push((Box::new(QuadraticLogDensity::from_covariance("lyapunov_gaussian", &sol.cov, p)?), true));
        // N(0, Q^{-1}) × N(0, −A^{-1}) with Q = A · (drift matrix)
        let (jac, _) = linear_part(inner.as_ref());
        if cfg.hamiltonian.drift_block == PhaseBlock::Position && jac.ncols() == d {
            let q = DMatrix::from_fn(d, d, |i, j| -setup.op.eigenvalues()[i] * jac[(i, j)]);
            if let Some(qinv) = q.clone().try_inverse() {
                let mut cov = DMatrix::zeros(p + d, p + d);
                cov.view_mut((0, 0), (p, p)).copy_from(&qinv);
                for (i, l) in setup.op.eigenvalues().iter().enumerate() {
                    cov[(p + i, p + i)] = 1.0 / l;
                }
                let sym = (&cov + cov.transpose()) * 0.5;
                if let Ok(c) = QuadraticLogDensity::from_covariance("displayed_gaussian", &sym, p) {
                    candidates.push((Box::new(c), false));
                }
            }
            let sc = side_condition(&setup.op, &jac);
            out.side_condition = Some(sc);
            if cfg.hamiltonian.check_side_condition && !(sc < 1.0) {
                notes.push(format!("side condition integral {sc:.4} is not below 1"));
            }
        }
    }
    if inner.name() == "gibbs_gradient" && cfg.hamiltonian.drift_block == PhaseBlock::Position && standard {
        candidates.push((Box::new(GradientLogDensity::new("derived_gibbs", 2.0, 1.0, inner.clone(), &setup.op)), true));
        candidates.push((
            Box::new(GradientLogDensity::new(
                "displayed_gibbs",
                1.0,
                0.5 * setup.op.lambda_min(),
                inner.clone(),
                &setup.op,
            )),
            false,
        ));
    }
    for (cand, derived) in candidates {
        let r = fp_residual(cand.as_ref(), &sys, &grid)?;
        if derived {
            checks.push(CheckResult::at_most(format!("fp_residual_{}", r.candidate), r.max_abs, tol, ""));
        } else {
            let verdict = if r.max_abs <= tol { "stationary" } else { "NOT stationary" };
            notes.push(format!(
                "candidate {}: max FP residual {:.3e} over {} points, {verdict}",
                r.candidate, r.max_abs, r.points
            ));
        }
        out.residuals.push(r);
    }
    Ok((out, checks, notes))
}

/// Reference samples: exact Gaussian, exact Gibbs, or long-run chains.
fn reference_samples(cfg: &ExperimentConfig, setup: &Setup, workers: usize) -> Result<(String, Vec<Vec<f64>>)> {
    let count = cfg.sampler.samples;
    let mut kind = cfg.invariance.reference;
    if kind == ReferenceKind::Auto {
        kind = match &setup.model {
            Model::Delay { .. } => ReferenceKind::Sampler,
            Model::Hamiltonian { inner, .. } if inner.name() == "gibbs_gradient" => ReferenceKind::Gibbs,
            _ if linear_system(setup).is_ok() => ReferenceKind::Lyapunov,
            _ => ReferenceKind::Sampler,
        };
    }
    match kind {
        ReferenceKind::Lyapunov => {
            let (f, s) = linear_system(setup)?;
            let g = GaussianReference::new(lyapunov_stationary_cov(&f, &s)?.cov)?;
            let r = run_paths(count as u64, g.dim(), workers, |i, out| {
                out.extend(g.sample(&mut rng_for_path(cfg.seed, i, Domain::Initial)));
                Ok(())
            })?;
            Ok(("lyapunov".into(), (0..count).map(|i| r.row(i).to_vec()).collect()))
        }
        ReferenceKind::Gibbs => {
            let Model::Hamiltonian { coupling, .. } = &setup.model else {
                return Err(Error::Config("Gibbs reference needs a hamiltonian model".into()));
            };
            let d = setup.op.dim();
            if coupling.clone() != DMatrix::identity(d, d) || setup.sig.matrix().clone() != DMatrix::identity(d, d) {
                return Err(Error::Config("Gibbs reference needs B = I and σ = I".into()));
            }
            let gibbs = gibbs_of(&cfg.drift.params, &setup.op)?;
            let reference = GibbsReference::new(&gibbs, &setup.op)?;
            let r = run_paths(count as u64, 2 * d, workers, |i, out| {
                out.extend(reference.sample(&mut rng_for_path(cfg.seed, i, Domain::Initial)));
                Ok(())
            })?;
            Ok(("gibbs".into(), (0..count).map(|i| r.row(i).to_vec()).collect()))
        }
        _ => Ok(("sampler".into(), sample_invariant(&sampler_for(cfg, setup, cfg.seed)?, workers)?)),
    }
}

/// The registry's Gibbs drift rebuilt with concrete type.
fn gibbs_of(params: &serde_json::Value, op: &SpectralOperator) -> Result<GibbsGradient> {
    let n = op.dim();
    let a = match params.get("a") {
        None | Some(serde_json::Value::Null) => vec![1.0; n],
        Some(serde_json::Value::Number(x)) => vec![x.as_f64().unwrap_or(f64::NAN); n],
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(e.to_string()))?,
    };
    let delta = params.get("delta").and_then(serde_json::Value::as_f64).unwrap_or(0.0);
    GibbsGradient::new(a, delta, op)
}

fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn samples_csv(samples: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let width = samples.first().map_or(0, Vec::len);
        w.write_record((0..width).map(|i| format!("z{i}")))
            .map_err(|e| Error::Io(e.to_string()))?;
        for s in samples {
            w.write_record(s.iter().map(|v| v.to_string()))
                .map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(buf)
}

/// Oracles, reference samples, stationarity of the dictionary and, for
/// semilinear models with a direction, the closability chain.
pub fn run_invariance(cfg: &ExperimentConfig, workers: usize) -> Result<RunOutput> {
    let setup = cfg.build()?;
    let dt = cfg.sampler.dt;
    let mut report = new_report(cfg, "invariance", dt);
    let (outcome, checks, notes) = oracle_outcome(cfg, &setup)?;
    report.checks.extend(checks);
    report.notes.extend(notes);
    let (kind, samples) = reference_samples(cfg, &setup, workers)?;
    report.insert("reference", &kind);
    let dynamics = dynamics_of(&setup);
    if cfg.invariance.covariance_steps > 0 {
        if let Some(cov) = &outcome.lyapunov_cov {
            let c = DMatrix::from_fn(cov.len(), cov.len(), |i, j| cov[i][j]);
            let sampler = sampler_for(cfg, &setup, cfg.seed)?;
            let emp = empirical_covariance(
                &dynamics,
                &sampler.initial,
                dt,
                sampler.burn_in,
                cfg.invariance.covariance_steps,
                cfg.invariance.covariance_chains,
                cfg.seed,
                workers,
            )?;
            report.checks.push(CheckResult::at_most(
                "empirical_covariance",
                relative_frobenius(&emp, &c),
                cfg.invariance.covariance_tol,
                "relative Frobenius distance to the Lyapunov covariance",
            ));
            report.insert("empirical_cov", &rows(&emp));
        } else {
            report.notes.push("no analytic covariance; empirical covariance skipped".into());
        }
    }
    report.insert("oracle", &outcome);
    let z_max = cfg.tolerances.z_max;
    let mut stationarity = Vec::new();
    for (r, f) in setup.functions.iter().enumerate() {
        let est = stationarity_check(
            &samples,
            &dynamics,
            cfg.invariance.stationarity_t,
            dt,
            f,
            cfg.seed.wrapping_add(1 + r as u64),
            workers,
        )?;
        report.checks.push(CheckResult::at_most(
            format!("stationarity_{}", f.name),
            est.z().abs(),
            z_max,
            format!("mean {:.4e} ± {:.3e}", est.mean, est.se),
        ));
        stationarity.push((f.name.clone(), est));
    }
    report.insert("stationarity", &stationarity);
    if let Model::Semilinear { drift, k: Some(k), .. } = &setup.model {
        for f in &setup.functions {
            let run = |refine| {
                closability_chain_check(
                    &samples,
                    &setup.op,
                    &setup.sig,
                    drift.as_ref(),
                    &setup.grid,
                    k,
                    f,
                    cfg.seed,
                    refine,
                    workers,
                )
            };
            let coarse = run(false)?;
            let fine = if cfg.tolerances.richardson { Some(run(true)?.diff) } else { None };
            report.functions.push(FunctionReport::new(
                f.name.clone(),
                coarse.lhs,
                coarse.rhs,
                coarse.diff,
                0.0,
                setup.grid.dt(),
                fine,
                z_max,
                cfg.tolerances.kappa_min,
            ));
        }
    }
    Ok(RunOutput {
        report: report.finish(),
        tables: vec![Table {
            name: "samples.csv".into(),
            bytes: samples_csv(&samples)?,
        }],
    })
}

/// Fomin bounds `|μ(∂_k f)| ≤ C|Ak|‖f‖` and the weight bound, per direction
/// and function.
pub fn run_fomin(cfg: &ExperimentConfig, workers: usize) -> Result<McReport> {
    let setup = cfg.build()?;
    let Model::Semilinear { drift, .. } = &setup.model else {
        unreachable!()
    };
    let samples = sample_invariant(&sampler_for(cfg, &setup, cfg.seed)?, workers)?;
    let mut report = new_report(cfg, "fomin", setup.grid.dt());
    let mut tables = Vec::new();
    for k in &setup.fomin_directions {
        for (r, f) in setup.functions.iter().enumerate() {
            let fr = fomin_check(
                &samples,
                &setup.op,
                &setup.sig,
                drift.as_ref(),
                &setup.grid,
                k,
                f,
                cfg.seed.wrapping_add(1 + r as u64),
                workers,
            )?;
            let tag = format!("{}@{:?}", f.name, k.coeffs());
            let slack = 3.0 * fr.derivative.se;
            report.checks.push(CheckResult::at_most(
                format!("fomin_constant_{tag}"),
                fr.derivative.mean.abs(),
                fr.bound + slack,
                format!("C = {:.6e}, rederived C' = {:.6e}", fr.constant, fr.constant_rederived),
            ));
            report.checks.push(CheckResult::at_most(
                format!("fomin_weight_{tag}"),
                fr.derivative.mean.abs(),
                fr.dm_bound + slack + 3.0 * fr.dm_bound_se,
                "",
            ));
            tables.push(fr);
        }
    }
    report.insert("fomin", &tables);
    Ok(report.finish())
}

/// Synchronous-coupling contraction on independent noise paths.
pub fn run_contraction(cfg: &ExperimentConfig, workers: usize) -> Result<McReport> {
    let setup = cfg.build()?;
    let Model::Semilinear { drift, x0, .. } = &setup.model else {
        unreachable!()
    };
    let cc = cfg
        .contraction
        .as_ref()
        .ok_or_else(|| Error::Config("contraction model needs a `contraction` section".into()))?;
    let n = setup.op.dim();
    let r = run_paths(cc.paths, 3, workers, |i, out| {
        let noise = NoisePath::generate(cfg.seed, i, n, &setup.grid);
        let c = contraction_check(x0, &cc.y0, &setup.op, &setup.sig, drift.as_ref(), &setup.grid, &noise, cc.kappa)?;
        let first = c.first_violation.as_ref().map_or(-1.0, |v| v.step as f64);
        out.extend([c.max_ratio, f64::from(u8::from(c.pass)), first]);
        Ok(())
    })?;
    let worst = r.column(0).fold(0.0f64, f64::max);
    let failures = r.column(1).filter(|p| *p == 0.0).count();
    let mut report = new_report(cfg, "contraction", setup.grid.dt());
    let slack = 1.0 + cc.kappa * setup.grid.dt();
    report.checks.push(CheckResult::at_most(
        "contraction_nodewise",
        worst,
        slack,
        format!("{failures} of {} paths violate the envelope", cc.paths),
    ));
    let example: ContractionReport = {
        let noise = NoisePath::generate(cfg.seed, 0, n, &setup.grid);
        contraction_check(x0, &cc.y0, &setup.op, &setup.sig, drift.as_ref(), &setup.grid, &noise, cc.kappa)?
    };
    let first: Vec<Option<usize>> = r
        .column(2)
        .map(|s| if s < 0.0 { None } else { Some(s as usize) })
        .collect();
    report.insert("path_0", &example);
    report.insert("first_violation_step", &first);
    report.insert("rate", &(example.c1 + example.c2));
    Ok(report.finish())
}
