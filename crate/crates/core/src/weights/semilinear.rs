use crate::drift::Drift;
use crate::error::{Error, Result};
use crate::quad::integrate_adaptive;
use crate::simulate::{NoisePath, PathSample};
use crate::spectral::{SigmaOperator, SpectralOperator};

/// Direction `k = Σ c_i e_i ∈ H_{A,n}`; mode `i` has `A e_i = −λ_i e_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDirection {
    coeffs: Vec<f64>,
}

impl EigenDirection {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.iter().all(|c| *c == 0.0) {
            return Err(Error::InvalidParameter("direction has no nonzero coefficient".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("direction coefficients must be finite".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn unit(n: usize, i: usize) -> Self {
        let mut coeffs = vec![0.0; n];
        coeffs[i] = 1.0;
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn active_modes(&self) -> Vec<usize> {
        (0..self.coeffs.len()).filter(|i| self.coeffs[*i] != 0.0).collect()
    }

    /// Eigenvalue `λ = −λ_i` of `A` for mode `i`.
    pub fn eigenvalue(&self, op: &SpectralOperator, i: usize) -> f64 {
        -op.eigenvalues()[i]
    }
}

/// `(e^{λt} − 1)/λ`, with the `λ = 0` limit `t`.
pub fn growth(lambda: f64, t: f64) -> f64 {
    let x = lambda * t;
    if x.abs() < 1e-12 {
        t
    } else if x.abs() < 1e-6 {
        t + 0.5 * lambda * t * t
    } else {
        x.exp_m1() / lambda
    }
}

/// Per-mode weights `M^{(i)}` for the listed modes:
/// `M^{(i)} = λ/(e^{λT}−1) Σ_j ⟨σ^{-1}(e_i − g(t_j) ∂_{e_i}b(X_j)), ΔW_j⟩`
/// with `λ = −λ_i`, `g(t) = (e^{λt}−1)/λ`.
pub fn semilinear_mode_weights(
    path: &PathSample,
    noise: &NoisePath,
    modes: &[usize],
    b: &dyn Drift,
    sig: &SigmaOperator,
    op: &SpectralOperator,
) -> Result<Vec<f64>> {
    let n = op.dim();
    if path.dim() != n || noise.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: path.dim(),
        });
    }
    if noise.steps() != path.steps() {
        return Err(Error::InvalidParameter(format!(
            "path has {} steps but {} increments are stored",
            path.steps(),
            noise.steps()
        )));
    }
    if let Some(bad) = modes.iter().find(|i| **i >= n) {
        return Err(Error::InvalidParameter(format!("mode {bad} outside the truncation")));
    }
    let inv = sig.inverse()?;
    let dt = path.dt();
    let steps = path.steps();
    let horizon = steps as f64 * dt;
    // Σ_j ⟨σ^{-1}e_i, ΔW_j⟩ telescopes to ⟨σ^{-1}e_i, W_T⟩
    let w_t = noise.terminal();
    let mut unit = vec![0.0; n];
    let mut sums: Vec<f64> = modes
        .iter()
        .map(|&i| {
            unit[i] = 1.0;
            let s = inv.inv_dot(&unit, &w_t);
            unit[i] = 0.0;
            s
        })
        .collect();
    let mut deriv = vec![0.0; n];
    // g(t + dt) = e^{λ dt} g(t) + g(dt), free of cancellation
    let decay: Vec<f64> = modes.iter().map(|&i| (-op.eigenvalues()[i] * dt).exp()).collect();
    let g_dt: Vec<f64> = modes.iter().map(|&i| growth(-op.eigenvalues()[i], dt)).collect();
    let mut g_now = vec![0.0; modes.len()];
    let drift_steps = if b.is_zero() { 0 } else { steps };
    for j in 0..drift_steps {
        let x = path.state(j);
        let dw = noise.increment(j);
        for (slot, &i) in modes.iter().enumerate() {
            let g = g_now[slot];
            g_now[slot] = decay[slot] * g + g_dt[slot];
            unit[i] = 1.0;
            b.dderiv(x, &unit, &mut deriv);
            unit[i] = 0.0;
            if g != 0.0 && deriv.iter().any(|d| *d != 0.0) {
                sums[slot] -= g * inv.inv_dot(&deriv, dw);
            }
        }
    }
    Ok(modes
        .iter()
        .zip(sums)
        .map(|(&i, s)| s / growth(-op.eigenvalues()[i], horizon))
        .collect())
}

/// `M_{x,T}` for a general direction: `Σ_i c_i M^{(i)}`.
pub fn semilinear_weight(
    path: &PathSample,
    noise: &NoisePath,
    k: &EigenDirection,
    b: &dyn Drift,
    sig: &SigmaOperator,
    op: &SpectralOperator,
) -> Result<f64> {
    if k.coeffs().len() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            got: k.coeffs().len(),
        });
    }
    let modes = k.active_modes();
    let per_mode = semilinear_mode_weights(path, noise, &modes, b, sig, op)?;
    Ok(modes.iter().zip(per_mode).map(|(i, m)| k.coeffs()[*i] * m).sum())
}

/// Upper bound for `E|M_{x,T}|²` uniform in `x`:
/// `(λ/(e^{λT}−1))² ∫_0^T (‖k‖_σ + |g(t)| sup_x ‖∂_k b‖_σ)² dt` per mode,
/// combined over modes with Minkowski's inequality.
pub fn fh_bound(
    k: &EigenDirection,
    b: &dyn Drift,
    sig: &SigmaOperator,
    op: &SpectralOperator,
    horizon: f64,
) -> Result<f64> {
    let n = op.dim();
    let mut root_sum = 0.0;
    for i in k.active_modes() {
        let lambda = -op.eigenvalues()[i];
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let k_norm = sig.sigma_norm(&e)?;
        let db = b.sigma_dderiv_bound(&e, sig)?;
        let integral = integrate_adaptive(
            |t| (k_norm + growth(lambda, t).abs() * db).powi(2),
            0.0,
            horizon,
            1e-12,
        );
        let pre = 1.0 / growth(lambda, horizon);
        root_sum += k.coeffs()[i].abs() * (pre * pre * integral).sqrt();
    }
    Ok(root_sum * root_sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{SineDrift, ZeroDrift};
    use crate::simulate::{simulate_semilinear, SimGrid};
    use approx::assert_relative_eq;

    #[test]
    fn growth_limits() {
        assert_eq!(growth(0.0, 2.0), 2.0);
        assert_relative_eq!(growth(1e-9, 1.0), 1.0 + 0.5e-9, epsilon = 1e-18);
        assert_relative_eq!(growth(-1.0, 1.0), 1.0 - (-1f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn zero_direction_is_rejected_and_zero_coefficients_vanish() {
        assert!(EigenDirection::new(vec![0.0, 0.0]).is_err());
        let op = SpectralOperator::new(vec![1.0, 2.0]).unwrap();
        let grid = SimGrid::new(1.0, 16).unwrap();
        let noise = NoisePath::generate(1, 2, 2, &grid);
        let sig = SigmaOperator::identity(2);
        let b = ZeroDrift::new(2);
        let p = simulate_semilinear(&[0.0, 0.0], &op, &sig, &b, &grid, &noise, None).unwrap();
        let w = semilinear_mode_weights(&p, &noise, &[], &b, &sig, &op).unwrap();
        assert!(w.is_empty());
        let k = EigenDirection::new(vec![0.0, 1.0]).unwrap();
        let m = semilinear_weight(&p, &noise, &k, &b, &sig, &op).unwrap();
        let m2 = semilinear_mode_weights(&p, &noise, &[1], &b, &sig, &op).unwrap()[0];
        assert_eq!(m, m2);
    }

    #[test]
    fn ou_weight_is_scaled_terminal_noise() {
        let op = SpectralOperator::new(vec![1.0]).unwrap();
        let grid = SimGrid::new(1.0, 64).unwrap();
        let noise = NoisePath::generate(5, 0, 1, &grid);
        let sig = SigmaOperator::identity(1);
        let b = ZeroDrift::new(1);
        let p = simulate_semilinear(&[0.3], &op, &sig, &b, &grid, &noise, None).unwrap();
        let m = semilinear_weight(&p, &noise, &EigenDirection::unit(1, 0), &b, &sig, &op).unwrap();
        assert_relative_eq!(m, noise.terminal()[0] / (1.0 - (-1f64).exp()), epsilon = 1e-13);
    }

    #[test]
    fn weight_is_linear_in_direction() {
        let op = SpectralOperator::power_law(3, 2.0).unwrap();
        let sig = SigmaOperator::diagonal(vec![1.0, 0.7, 0.5]).unwrap();
        let b = SineDrift::new(3, 0.5);
        let grid = SimGrid::new(1.0, 64).unwrap();
        let noise = NoisePath::generate(8, 1, 3, &grid);
        let p = simulate_semilinear(&[0.2, 0.1, -0.4], &op, &sig, &b, &grid, &noise, None).unwrap();
        let k = EigenDirection::new(vec![1.0, -2.0, 0.5]).unwrap();
        let k3 = EigenDirection::new(vec![3.0, -6.0, 1.5]).unwrap();
        let m = semilinear_weight(&p, &noise, &k, &b, &sig, &op).unwrap();
        let m3 = semilinear_weight(&p, &noise, &k3, &b, &sig, &op).unwrap();
        assert_relative_eq!(m3, 3.0 * m, epsilon = 1e-12);
    }

    #[test]
    fn fh_bound_ou_closed_form() {
        let op = SpectralOperator::new(vec![1.0]).unwrap();
        let sig = SigmaOperator::identity(1);
        let v = fh_bound(&EigenDirection::unit(1, 0), &ZeroDrift::new(1), &sig, &op, 1.0).unwrap();
        assert_relative_eq!(v, (1.0 - (-1f64).exp()).powi(-2), epsilon = 1e-12);
    }
}
