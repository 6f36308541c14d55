use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quad::integrate_adaptive;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Pair of time profiles `(φ, ψ)` on `[0, T]` with their derivatives, used
/// to build the Hamiltonian shift.
#[derive(Clone)]
pub struct PhiPsi {
    horizon: f64,
    theta1: f64,
    theta2: f64,
    phi: ScalarFn,
    dphi: ScalarFn,
    psi: ScalarFn,
    dpsi: ScalarFn,
}

impl fmt::Debug for PhiPsi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhiPsi")
            .field("horizon", &self.horizon)
            .field("theta1", &self.theta1)
            .field("theta2", &self.theta2)
            .finish_non_exhaustive()
    }
}

impl PhiPsi {
    pub fn from_fns(
        horizon: f64,
        theta1: f64,
        theta2: f64,
        phi: ScalarFn,
        dphi: ScalarFn,
        psi: ScalarFn,
        dpsi: ScalarFn,
    ) -> Self {
        Self {
            horizon,
            theta1,
            theta2,
            phi,
            dphi,
            psi,
            dpsi,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn thetas(&self) -> (f64, f64) {
        (self.theta1, self.theta2)
    }
    pub fn phi(&self, t: f64) -> f64 {
        (self.phi)(t)
    }
    pub fn dphi(&self, t: f64) -> f64 {
        (self.dphi)(t)
    }
    pub fn psi(&self, t: f64) -> f64 {
        (self.psi)(t)
    }
    pub fn dpsi(&self, t: f64) -> f64 {
        (self.dpsi)(t)
    }

    /// Replace `φ` by `φ + bump` (and `φ'` accordingly); used to probe the
    /// constraint checker.
    pub fn with_phi_perturbation(&self, bump: ScalarFn, dbump: ScalarFn) -> Self {
        let (phi, dphi) = (self.phi.clone(), self.dphi.clone());
        Self {
            phi: Arc::new(move |t| phi(t) + bump(t)),
            dphi: Arc::new(move |t| dphi(t) + dbump(t)),
            ..self.clone()
        }
    }
}

/// The explicit pair
/// `φ(t) = e^{θ₁T} t(T−t) / ∫_0^T s(T−s)e^{θ₁s} ds`,
/// `ψ(t) = e^{θ₂(T−t)}/T · (3t²/T − 2t)`.
pub fn default_phi_psi(horizon: f64, theta1: f64, theta2: f64) -> Result<PhiPsi> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("T must be positive, got {horizon}")));
    }
    let t_end = horizon;
    let denom = if theta1 == 0.0 {
        t_end.powi(3) / 6.0
    } else {
        integrate_adaptive(|s| s * (t_end - s) * (theta1 * s).exp(), 0.0, t_end, 1e-14)
    };
    let scale = (theta1 * t_end).exp() / denom;
    let phi: ScalarFn = Arc::new(move |t| scale * t * (t_end - t));
    let dphi: ScalarFn = Arc::new(move |t| scale * (t_end - 2.0 * t));
    let psi: ScalarFn = Arc::new(move |t| {
        (theta2 * (t_end - t)).exp() / t_end * (3.0 * t * t / t_end - 2.0 * t)
    });
    let dpsi: ScalarFn = Arc::new(move |t| {
        let e = (theta2 * (t_end - t)).exp() / t_end;
        e * (-theta2 * (3.0 * t * t / t_end - 2.0 * t) + 6.0 * t / t_end - 2.0)
    });
    Ok(PhiPsi::from_fns(horizon, theta1, theta2, phi, dphi, psi, dpsi))
}

/// Residuals of the six boundary/moment conditions:
/// `[φ(0), φ(T), ψ(0), ψ(T)−1, ∫e^{θ₂t}ψ, ∫φe^{θ₁t} − e^{θ₁T}]`.
pub fn check_ph_constraints(pp: &PhiPsi) -> [f64; 6] {
    let t = pp.horizon;
    let (th1, th2) = pp.thetas();
    let psi_moment = integrate_adaptive(|s| (th2 * s).exp() * pp.psi(s), 0.0, t, 1e-12);
    let phi_moment = integrate_adaptive(|s| pp.phi(s) * (th1 * s).exp(), 0.0, t, 1e-12);
    [
        pp.phi(0.0),
        pp.phi(t),
        pp.psi(0.0),
        pp.psi(t) - 1.0,
        psi_moment,
        phi_moment - (th1 * t).exp(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn theta_zero_unit_horizon() {
        let pp = default_phi_psi(1.0, 0.0, 0.0).unwrap();
        for t in [0.1, 0.5, 0.9] {
            assert_relative_eq!(pp.phi(t), 6.0 * t * (1.0 - t), epsilon = 1e-14);
            assert_relative_eq!(pp.psi(t), 3.0 * t * t - 2.0 * t, epsilon = 1e-14);
        }
        for r in check_ph_constraints(&pp) {
            assert!(r.abs() < 1e-14, "{r}");
        }
    }

    #[test]
    fn mixed_thetas_satisfy_constraints() {
        let pp = default_phi_psi(1.5, -1.0, 2.0).unwrap();
        for r in check_ph_constraints(&pp) {
            assert!(r.abs() < 1e-10, "{r}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let pp = default_phi_psi(1.3, 0.7, -1.1).unwrap();
        let h = 1e-6;
        for t in [0.05, 0.4, 0.8, 1.25] {
            let fd_phi = (pp.phi(t + h) - pp.phi(t - h)) / (2.0 * h);
            let fd_psi = (pp.psi(t + h) - pp.psi(t - h)) / (2.0 * h);
            assert_relative_eq!(fd_phi, pp.dphi(t), epsilon = 1e-7);
            assert_relative_eq!(fd_psi, pp.dpsi(t), epsilon = 1e-7);
        }
    }

    #[test]
    fn bump_is_detected() {
        let t_end = 1.0;
        let pp = default_phi_psi(t_end, 0.0, 0.0).unwrap();
        let pi = std::f64::consts::PI;
        let bumped = pp.with_phi_perturbation(
            Arc::new(move |t| 0.1 * (pi * t / t_end).sin().powi(2)),
            Arc::new(move |t| 0.1 * pi / t_end * (2.0 * pi * t / t_end).sin()),
        );
        let r = check_ph_constraints(&bumped);
        // ∫_0^1 sin²(πt) dt = 1/2
        assert_relative_eq!(r[5], 0.05, epsilon = 1e-10);
        assert!(r[..5].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rejects_nonpositive_horizon() {
        assert!(default_phi_psi(0.0, 1.0, 1.0).is_err());
    }
}
