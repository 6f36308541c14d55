use serde::{Deserialize, Serialize};

use super::sampler::Dynamics;
use crate::drift::Drift;
use crate::error::{Error, Result};
use crate::harness::cylinder::CylinderFunction;
use crate::harness::reduce::{run_paths, ColumnStats, Estimate};
use crate::harness::rng::{rng_for_path, Domain};
use crate::simulate::{simulate_semilinear, NoisePath, SimGrid};
use crate::spectral::{norm, SigmaOperator, SpectralOperator};
use crate::weights::{semilinear_weight, EigenDirection};

/// Paired estimate of `E[lhs] = E[rhs]` from the same samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedEstimate {
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub diff: Estimate,
}

/// `E[f(x) − f(X^x(t))]` over `x` from `samples`, each propagated with its
/// own noise stream.
#[allow(clippy::too_many_arguments)]
pub fn stationarity_check(
    samples: &[Vec<f64>],
    dynamics: &Dynamics,
    t: f64,
    dt: f64,
    f: &CylinderFunction,
    seed: u64,
    workers: usize,
) -> Result<Estimate> {
    let steps = (t / dt).round() as usize;
    let r = run_paths(samples.len() as u64, 1, workers, |i, out| {
        let x = &samples[i as usize];
        let mut state = x.clone();
        let mut rng = rng_for_path(seed, i, Domain::Noise);
        dynamics.propagate(&mut state, steps, dt, &mut rng)?;
        out.push(dynamics.evaluate(f, x, dt) - dynamics.evaluate(f, &state, dt));
        Ok(())
    })?;
    Ok(r.stats(0).into())
}

/// Paired check of `μ(∂_k f) = E_{P×μ}[f(X_T) M]` with `x` drawn from
/// `samples`; `refine` reruns on the bridged half-step grid.
#[allow(clippy::too_many_arguments)]
pub fn closability_chain_check(
    samples: &[Vec<f64>],
    op: &SpectralOperator,
    sig: &SigmaOperator,
    drift: &dyn Drift,
    grid: &SimGrid,
    k: &EigenDirection,
    f: &CylinderFunction,
    seed: u64,
    refine: bool,
    workers: usize,
) -> Result<PairedEstimate> {
    let n = op.dim();
    let run_grid = if refine { grid.refined() } else { *grid };
    let r = run_paths(samples.len() as u64, 3, workers, |i, out| {
        let x = &samples[i as usize];
        let mut noise = NoisePath::generate(seed, i, n, grid);
        if refine {
            noise = noise.refine();
        }
        let path = simulate_semilinear(x, op, sig, drift, &run_grid, &noise, None)?;
        let m = semilinear_weight(&path, &noise, k, drift, sig, op)?;
        let lhs = f.dderiv(x, k.coeffs());
        let rhs = f.eval(path.terminal()) * m;
        out.extend([lhs, rhs, lhs - rhs]);
        Ok(())
    })?;
    Ok(PairedEstimate {
        lhs: r.stats(0).into(),
        rhs: r.stats(1).into(),
        diff: r.stats(2).into(),
    })
}

/// `Σ_i 1/λ_i` over the truncation.
pub fn alpha(op: &SpectralOperator) -> f64 {
    op.eigenvalues().iter().map(|l| 1.0 / l).sum()
}

/// `C = (‖σ^{-1}‖√α/(e−1)) (1 + (e−1)‖∂b‖_∞/λ₁)`.
pub fn fomin_constant(op: &SpectralOperator, sig: &SigmaOperator, lip: f64) -> Result<f64> {
    let e1 = std::f64::consts::E - 1.0;
    Ok(sig.inv_op_norm()? * alpha(op).sqrt() / e1 * (1.0 + e1 / op.lambda_min() * lip))
}

/// The constant obtained by evaluating the same chain of estimates with
/// `T = 1/λ_i`: there `λ/(e^{λT}−1) = eλ_i/(e−1)` and `|g(t)| ≤ 1/λ_i`,
/// giving `C' = (e‖σ^{-1}‖√α/(e−1)) (1 + ‖∂b‖_∞/λ₁)`.
pub fn fomin_constant_rederived(op: &SpectralOperator, sig: &SigmaOperator, lip: f64) -> Result<f64> {
    let e = std::f64::consts::E;
    Ok(sig.inv_op_norm()? * alpha(op).sqrt() * e / (e - 1.0) * (1.0 + lip / op.lambda_min()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FominReport {
    pub function: String,
    pub direction: Vec<f64>,
    /// `μ(∂_k f)`.
    pub derivative: Estimate,
    /// `√μ(f²)`.
    pub f_l2: f64,
    pub a_k_norm: f64,
    pub constant: f64,
    pub constant_rederived: f64,
    pub bound: f64,
    pub bound_rederived: f64,
    /// `(P×μ)(M²)` for the horizon used.
    pub weight_second_moment: Estimate,
    pub dm_bound: f64,
    pub dm_bound_se: f64,
    pub pass_bound: bool,
    pub pass_bound_rederived: bool,
    pub pass_dm: bool,
}

/// Estimate `|μ(∂_k f)|` and compare with `C|Ak|·‖f‖_{L²(μ)}` and with the
/// weight bound `√((P×μ)(M²) μ(f²))` at horizon `grid.horizon()`.
#[allow(clippy::too_many_arguments)]
pub fn fomin_check(
    samples: &[Vec<f64>],
    op: &SpectralOperator,
    sig: &SigmaOperator,
    drift: &dyn Drift,
    grid: &SimGrid,
    k: &EigenDirection,
    f: &CylinderFunction,
    seed: u64,
    workers: usize,
) -> Result<FominReport> {
    let lip = drift.lipschitz_const().ok_or_else(|| {
        Error::Config(format!("drift `{}` has no Lipschitz constant", drift.name()))
    })?;
    let n = op.dim();
    let r = run_paths(samples.len() as u64, 3, workers, |i, out| {
        let x = &samples[i as usize];
        let noise = NoisePath::generate(seed, i, n, grid);
        let path = simulate_semilinear(x, op, sig, drift, grid, &noise, None)?;
        let m = semilinear_weight(&path, &noise, k, drift, sig, op)?;
        let fx = f.eval(x);
        out.extend([f.dderiv(x, k.coeffs()), fx * fx, m * m]);
        Ok(())
    })?;
    let derivative: Estimate = r.stats(0).into();
    let f2: ColumnStats = r.stats(1);
    let m2: ColumnStats = r.stats(2);
    let f_l2 = f2.mean.sqrt();
    let a_k_norm = norm(&op.apply_a(k.coeffs())?);
    let constant = fomin_constant(op, sig, lip)?;
    let constant_rederived = fomin_constant_rederived(op, sig, lip)?;
    let bound = constant * a_k_norm * f_l2;
    let bound_rederived = constant_rederived * a_k_norm * f_l2;
    let dm_bound = (m2.mean * f2.mean).sqrt();
    // delta method for √(ab)
    let rel = |s: &ColumnStats| if s.mean > 0.0 { s.se() / s.mean } else { 0.0 };
    let dm_bound_se = 0.5 * dm_bound * (rel(&m2) + rel(&f2));
    let lhs = derivative.mean.abs();
    let slack = 3.0 * derivative.se;
    Ok(FominReport {
        function: f.name.clone(),
        direction: k.coeffs().to_vec(),
        derivative,
        f_l2,
        a_k_norm,
        constant,
        constant_rederived,
        bound,
        bound_rederived,
        weight_second_moment: m2.into(),
        dm_bound,
        dm_bound_se,
        pass_bound: lhs <= bound + slack,
        pass_bound_rederived: lhs <= bound_rederived + slack,
        pass_dm: lhs <= dm_bound + slack + 3.0 * dm_bound_se,
    })
}

/// `ε_k(f, g) = μ((∂_k f)(∂_k g))`.
pub fn form_energy(samples: &[Vec<f64>], f: &CylinderFunction, g: &CylinderFunction, k: &[f64]) -> Estimate {
    ColumnStats::from_values(samples.iter().map(|x| f.dderiv(x, k) * g.dderiv(x, k))).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionViolation {
    pub step: usize,
    pub t: f64,
    pub distance: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub c1: f64,
    pub c2: f64,
    pub kappa: f64,
    pub initial_distance: f64,
    pub terminal_distance: f64,
    /// `max_j |X_j − Y_j| / (e^{−(c₁+c₂)t_j}|x−y|)`.
    pub max_ratio: f64,
    pub first_violation: Option<ContractionViolation>,
    pub pass: bool,
}

/// Synchronous coupling: both solutions driven by `noise`; checks
/// `|X^x(t) − X^y(t)| ≤ e^{−(c₁+c₂)t}|x − y|(1 + κ dt)` at every node.
#[allow(clippy::too_many_arguments)]
pub fn contraction_check(
    x0: &[f64],
    y0: &[f64],
    op: &SpectralOperator,
    sig: &SigmaOperator,
    drift: &dyn Drift,
    grid: &SimGrid,
    noise: &NoisePath,
    kappa: f64,
) -> Result<ContractionReport> {
    let c2 = drift.dissipativity().ok_or_else(|| {
        Error::Config(format!("drift `{}` has no known dissipativity constant", drift.name()))
    })?;
    let c1 = op.lambda_min();
    let px = simulate_semilinear(x0, op, sig, drift, grid, noise, None)?;
    let py = simulate_semilinear(y0, op, sig, drift, grid, noise, None)?;
    let dist = |j: usize| -> f64 {
        let d: Vec<f64> = px.state(j).iter().zip(py.state(j)).map(|(a, b)| a - b).collect();
        norm(&d)
    };
    let d0 = dist(0);
    // 1e-12 absorbs roundoff when the envelope is attained exactly
    let slack = 1.0 + kappa * grid.dt() + 1e-12;
    let mut max_ratio = 0.0f64;
    let mut first_violation = None;
    for j in 0..=grid.steps() {
        let t = grid.time(j);
        let envelope = (-(c1 + c2) * t).exp() * d0;
        let dj = dist(j);
        if envelope > 0.0 {
            max_ratio = max_ratio.max(dj / envelope);
        }
        if first_violation.is_none() && dj > envelope * slack {
            first_violation = Some(ContractionViolation {
                step: j,
                t,
                distance: dj,
                bound: envelope * slack,
            });
        }
    }
    Ok(ContractionReport {
        c1,
        c2,
        kappa,
        initial_distance: d0,
        terminal_distance: dist(grid.steps()),
        max_ratio,
        pass: first_violation.is_none(),
        first_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{SineDrift, ZeroDrift};
    use crate::harness::cylinder::Outer;
    use crate::measures::sampler::Dynamics;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    #[test]
    fn fomin_constant_examples() {
        let e1 = std::f64::consts::E - 1.0;
        let op = SpectralOperator::new(vec![1.0]).unwrap();
        let id = SigmaOperator::identity(1);
        assert_relative_eq!(fomin_constant(&op, &id, 0.0).unwrap(), 1.0 / e1, epsilon = 1e-15);
        let op2 = SpectralOperator::new(vec![1.0, 4.0]).unwrap();
        let id2 = SigmaOperator::identity(2);
        assert_relative_eq!(fomin_constant(&op2, &id2, 0.0).unwrap(), 1.25f64.sqrt() / e1, epsilon = 1e-15);
        let half = SigmaOperator::diagonal(vec![0.5, 0.5]).unwrap();
        assert_relative_eq!(
            fomin_constant(&op2, &half, 0.3).unwrap(),
            2.0 * fomin_constant(&op2, &id2, 0.3).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn constant_function_is_stationary_exactly() {
        let dynamics = Dynamics::Semilinear {
            op: SpectralOperator::new(vec![1.0]).unwrap(),
            sig: SigmaOperator::identity(1),
            drift: Arc::new(ZeroDrift::new(1)),
        };
        let samples = vec![vec![0.3]; 50];
        let z = stationarity_check(&samples, &dynamics, 1.0, 0.01, &CylinderFunction::constant(), 1, 1).unwrap();
        assert_eq!(z.mean, 0.0);
        assert_eq!(z.z(), 0.0);
    }

    #[test]
    fn form_energy_of_sine_under_standard_gaussian() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<Vec<f64>> = (0..40_000).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
        let f = CylinderFunction::new("sin", Outer::Sin, vec![vec![1.0]]);
        let e = form_energy(&samples, &f, &f, &[1.0]);
        let exact = 0.5 * (1.0 + (-2f64).exp());
        assert!((e.mean - exact).abs() < 3.0 * e.se);
        let zero = form_energy(&samples, &f, &CylinderFunction::constant(), &[1.0]);
        assert_eq!(zero.mean, 0.0);
    }

    #[test]
    fn contraction_of_linear_flow_is_exact_rate() {
        let op = SpectralOperator::new(vec![1.0, 3.0]).unwrap();
        let sig = SigmaOperator::identity(2);
        let grid = SimGrid::new(2.0, 200).unwrap();
        let noise = NoisePath::generate(1, 0, 2, &grid);
        let b = crate::drift::LinearDrift::new(nalgebra::DMatrix::zeros(2, 2));
        let r = contraction_check(&[1.0, 0.0], &[0.0, 0.0], &op, &sig, &b, &grid, &noise, 0.0).unwrap();
        assert!(r.pass);
        assert_relative_eq!(r.terminal_distance, (-2f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn contraction_with_sine_drift() {
        let op = SpectralOperator::power_law(3, 2.0).unwrap();
        let sig = SigmaOperator::identity(3);
        let grid = SimGrid::new(4.0, 400).unwrap();
        let noise = NoisePath::generate(2, 0, 3, &grid);
        let b = SineDrift::new(3, 0.5);
        let r = contraction_check(&[1.0, -0.5, 0.2], &[-0.3, 0.4, 0.0], &op, &sig, &b, &grid, &noise, 10.0).unwrap();
        assert!(r.pass, "{r:?}");
        let same = contraction_check(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &op, &sig, &b, &grid, &noise, 10.0).unwrap();
        assert_eq!(same.terminal_distance, 0.0);
    }
}
