use super::delay::DelayIngredients;
use super::hamiltonian::HamIngredients;
use crate::drift::{Drift, SegmentDrift};
use crate::error::{Error, Result};
use crate::simulate::{DelayPath, HamPath, NoisePath};
use crate::spectral::SigmaOperator;

/// Exponents beyond this are clamped before exponentiation.
const EXPONENT_CLAMP: f64 = 700.0;

/// Discrete Girsanov density `R_ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GirsanovDensity {
    pub value: f64,
    pub exponent: f64,
    /// Set when `|exponent|` exceeded the clamp.
    pub clamped: bool,
}

/// `R = exp[−Σ_j ⟨σ^{-1}ξ_j, ΔW_j⟩ − ½ Σ_j dt (|σ^{-1}ξ_j|² + |σ^{-1}ξ_{j+1}|²)/2]`
/// for an integrand tabulated on the `N + 1` grid nodes (row-major).
pub fn girsanov_density(noise: &NoisePath, integrand: &[f64], sig: &SigmaOperator) -> Result<GirsanovDensity> {
    let n = noise.dim();
    let steps = noise.steps();
    if integrand.len() != (steps + 1) * n {
        return Err(Error::DimensionMismatch {
            expected: (steps + 1) * n,
            got: integrand.len(),
        });
    }
    let inv = sig.inverse()?;
    let dt = noise.dt();
    let row = |j: usize| &integrand[j * n..(j + 1) * n];
    let mut ito = 0.0;
    let mut qv = 0.0;
    let mut prev = inv.inv_norm_sq(row(0));
    for j in 0..steps {
        ito += inv.inv_dot(row(j), noise.increment(j));
        let next = inv.inv_norm_sq(row(j + 1));
        qv += 0.5 * dt * (prev + next);
        prev = next;
    }
    let exponent = -ito - 0.5 * qv;
    let clamped = !(exponent.abs() <= EXPONENT_CLAMP);
    let value = exponent.clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP).exp();
    Ok(GirsanovDensity {
        value,
        exponent,
        clamped,
    })
}

/// `ξ_ε(t_j) = ε h'(t_j) + b(Z_j) − b(Z^ε_j)`, the drift mismatch of the
/// shifted Hamiltonian system.
pub fn hamiltonian_girsanov_integrand(
    base: &HamPath,
    shifted: &HamPath,
    ing: &HamIngredients,
    eps: f64,
    b: &dyn Drift,
) -> Result<Vec<f64>> {
    let steps = base.steps();
    if shifted.steps() != steps || ing.grid().steps() != steps {
        return Err(Error::InvalidParameter("base, shifted path and ingredients disagree".into()));
    }
    let d = base.vel_dim();
    let mut out = Vec::with_capacity((steps + 1) * d);
    let mut b0 = vec![0.0; d];
    let mut b1 = vec![0.0; d];
    for j in 0..=steps {
        b.eval(base.state(j), &mut b0);
        b.eval(shifted.state(j), &mut b1);
        out.extend(
            ing.hprime(j)
                .iter()
                .zip(&b0)
                .zip(&b1)
                .map(|((h, x), y)| eps * h + x - y),
        );
    }
    Ok(out)
}

/// `ξ_ε(t_j) = ε Γ(t_j) + b(X_{t_j}) − b(X^ε_{t_j})` for the delay system.
pub fn delay_girsanov_integrand(
    base: &DelayPath,
    shifted: &DelayPath,
    ing: &DelayIngredients,
    eps: f64,
    b: &dyn SegmentDrift,
) -> Result<Vec<f64>> {
    let steps = base.steps();
    if shifted.steps() != steps || ing.grid().steps() != steps {
        return Err(Error::InvalidParameter("base, shifted path and ingredients disagree".into()));
    }
    let n = base.dim();
    let mut out = Vec::with_capacity((steps + 1) * n);
    let mut b0 = vec![0.0; n];
    let mut b1 = vec![0.0; n];
    for j in 0..=steps {
        b.eval(&base.segment(j), &mut b0);
        b.eval(&shifted.segment(j), &mut b1);
        out.extend(
            ing.gamma(j)
                .iter()
                .zip(&b0)
                .zip(&b1)
                .map(|((g, x), y)| eps * g + x - y),
        );
    }
    Ok(out)
}
