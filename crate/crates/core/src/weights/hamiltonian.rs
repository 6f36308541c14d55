use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::phipsi::{check_ph_constraints, PhiPsi};
use crate::drift::Drift;
use crate::error::{Error, Result};
use crate::quad::cumulative_integral;
use crate::simulate::{HamPath, NoisePath, Shift, SimGrid};
use crate::spectral::{norm, SigmaOperator, SpectralOperator, SIGMA_EIGEN_FLOOR};

/// Residual tolerance of the eigen-relations checked at construction.
const EIGEN_TOL: f64 = 1e-10;

/// Direction `k = (k₁, k₂)` on `H̃ × H` with `A k₂ = θ₂ k₂` and
/// `A B*(BB*)^{-1} k₁ = θ₁ B*(BB*)^{-1} k₁`.
#[derive(Debug, Clone)]
pub struct HamDirection {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k1_lift: Vec<f64>,
    bk2: Vec<f64>,
    theta1: f64,
    theta2: f64,
}

fn eigen_coefficient(op: &SpectralOperator, v: &[f64], label: &str) -> Result<f64> {
    let nv = norm(v);
    if nv == 0.0 {
        return Ok(0.0);
    }
    let av = op.apply_a(v)?;
    let theta = av.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nv * nv);
    let resid: Vec<f64> = av.iter().zip(v).map(|(a, b)| a - theta * b).collect();
    if norm(&resid) > EIGEN_TOL * norm(&av) {
        return Err(Error::Constraint(format!(
            "{label} is not an eigenvector of A (residual {:e})",
            norm(&resid)
        )));
    }
    Ok(theta)
}

impl HamDirection {
    pub fn new(k1: Vec<f64>, k2: Vec<f64>, coupling: &DMatrix<f64>, op: &SpectralOperator) -> Result<Self> {
        let (p, d) = coupling.shape();
        if d != op.dim() || k2.len() != d {
            return Err(Error::DimensionMismatch {
                expected: op.dim(),
                got: k2.len(),
            });
        }
        if k1.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: k1.len(),
            });
        }
        if norm(&k1) == 0.0 && norm(&k2) == 0.0 {
            return Err(Error::InvalidParameter("direction (k1, k2) is zero".into()));
        }
        let bbt = coupling * coupling.transpose();
        let eig = SymmetricEigen::new(bbt.clone());
        if eig.eigenvalues.min() < SIGMA_EIGEN_FLOOR {
            return Err(Error::Constraint("BB* is singular".into()));
        }
        let solved = bbt
            .lu()
            .solve(&DVector::from_column_slice(&k1))
            .ok_or_else(|| Error::Constraint("BB* is singular".into()))?;
        let k1_lift: Vec<f64> = (coupling.transpose() * solved).iter().copied().collect();
        let bk2: Vec<f64> = (coupling * DVector::from_column_slice(&k2)).iter().copied().collect();
        let theta1 = eigen_coefficient(op, &k1_lift, "B*(BB*)^{-1}k1")?;
        let theta2 = eigen_coefficient(op, &k2, "k2")?;
        Ok(Self {
            k1,
            k2,
            k1_lift,
            bk2,
            theta1,
            theta2,
        })
    }

    pub fn thetas(&self) -> (f64, f64) {
        (self.theta1, self.theta2)
    }

    pub fn k1(&self) -> &[f64] {
        &self.k1
    }

    pub fn k2(&self) -> &[f64] {
        &self.k2
    }

    /// `(k₁, k₂)` concatenated.
    pub fn stacked(&self) -> Vec<f64> {
        self.k1.iter().chain(&self.k2).copied().collect()
    }
}

/// `h'`, `h̃` and `Θ = (∫_0^t B h̃, h̃)` on a simulation grid.
#[derive(Debug, Clone)]
pub struct HamIngredients {
    pp: PhiPsi,
    dir: HamDirection,
    grid: SimGrid,
    hprime: Vec<f64>,
    theta: Vec<f64>,
}

impl HamIngredients {
    fn vel_dim(&self) -> usize {
        self.dir.k2.len()
    }

    fn phase_dim(&self) -> usize {
        self.dir.k1.len() + self.dir.k2.len()
    }

    pub fn grid(&self) -> &SimGrid {
        &self.grid
    }

    pub fn phi_psi(&self) -> &PhiPsi {
        &self.pp
    }

    pub fn direction(&self) -> &HamDirection {
        &self.dir
    }

    /// `h'(t) = φ'(t)e^{θ₁(t−T)} B*(BB*)^{-1}k₁ + ψ'(t)e^{θ₂(t−T)} k₂`.
    pub fn hprime_at(&self, t: f64) -> Vec<f64> {
        let (a, b) = self.profile(t, true);
        self.combine(a, b)
    }

    /// `h̃(t) = φ(t)e^{θ₁(t−T)} B*(BB*)^{-1}k₁ + ψ(t)e^{θ₂(t−T)} k₂`.
    pub fn htilde_at(&self, t: f64) -> Vec<f64> {
        let (a, b) = self.profile(t, false);
        self.combine(a, b)
    }

    fn profile(&self, t: f64, derivative: bool) -> (f64, f64) {
        let big_t = self.pp.horizon();
        let (th1, th2) = self.dir.thetas();
        let (f, g) = if derivative {
            (self.pp.dphi(t), self.pp.dpsi(t))
        } else {
            (self.pp.phi(t), self.pp.psi(t))
        };
        (f * (th1 * (t - big_t)).exp(), g * (th2 * (t - big_t)).exp())
    }

    fn combine(&self, a: f64, b: f64) -> Vec<f64> {
        self.dir
            .k1_lift
            .iter()
            .zip(&self.dir.k2)
            .map(|(u, v)| a * u + b * v)
            .collect()
    }

    /// `h'(t_j)` on grid node `j`.
    pub fn hprime(&self, j: usize) -> &[f64] {
        let d = self.vel_dim();
        &self.hprime[j * d..(j + 1) * d]
    }

    /// `Θ(t_j)` on grid node `j`, as a phase-space vector.
    pub fn theta(&self, j: usize) -> &[f64] {
        let w = self.phase_dim();
        &self.theta[j * w..(j + 1) * w]
    }

    /// Drift shift `ε h'(t)` for the shifted system.
    pub fn shift(&self, eps: f64) -> Shift {
        let d = self.vel_dim();
        Shift::from_fn(eps, &self.grid, d, |t| self.hprime_at(t)).expect("dimensions agree")
    }

    /// CSV columns: `t, phi, psi, hprime_*, htilde_*, theta_*`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let d = self.vel_dim();
        let mut header = vec!["t".to_string(), "phi".into(), "psi".into()];
        header.extend((1..=d).map(|i| format!("hprime_{i}")));
        header.extend((1..=d).map(|i| format!("htilde_{i}")));
        header.extend((1..=self.phase_dim()).map(|i| format!("theta_{i}")));
        out.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for (j, t) in self.grid.times().into_iter().enumerate() {
            let mut rec = vec![t.to_string(), self.pp.phi(t).to_string(), self.pp.psi(t).to_string()];
            rec.extend(self.hprime(j).iter().map(f64::to_string));
            rec.extend(self.htilde_at(t).iter().map(f64::to_string));
            rec.extend(self.theta(j).iter().map(f64::to_string));
            out.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Tabulate `h'`, `h̃`, `Θ` on `grid`. The `x`-block of `Θ` is integrated
/// cell by cell with an 8-point Gauss rule, so `Θ(T) = (k₁, k₂)` holds to
/// quadrature precision regardless of the step size.
pub fn ham_h_theta(pp: &PhiPsi, dir: &HamDirection, grid: &SimGrid) -> Result<HamIngredients> {
    let worst = check_ph_constraints(pp)
        .iter()
        .fold(0.0f64, |m, r| m.max(r.abs()));
    if worst > 1e-8 {
        return Err(Error::Constraint(format!(
            "(phi, psi) violates its boundary/moment conditions (max residual {worst:e})"
        )));
    }
    if (pp.horizon() - grid.horizon()).abs() > 1e-12 * grid.horizon() {
        return Err(Error::InvalidParameter(format!(
            "profile horizon {} differs from grid horizon {}",
            pp.horizon(),
            grid.horizon()
        )));
    }
    let (p1, p2) = pp.thetas();
    let (d1, d2) = dir.thetas();
    let matches = |a: f64, b: f64, v: &[f64]| norm(v) == 0.0 || (a - b).abs() <= 1e-10 * (1.0 + b.abs());
    if !matches(p1, d1, &dir.k1_lift) || !matches(p2, d2, &dir.k2) {
        return Err(Error::InvalidParameter(format!(
            "profile exponents ({p1}, {p2}) do not match direction eigenvalues ({d1}, {d2})"
        )));
    }
    let mut ing = HamIngredients {
        pp: pp.clone(),
        dir: dir.clone(),
        grid: *grid,
        hprime: Vec::new(),
        theta: Vec::new(),
    };
    let times = grid.times();
    let big_t = pp.horizon();
    let int1 = cumulative_integral(&times, |s| pp.phi(s) * (p1 * (s - big_t)).exp());
    let int2 = cumulative_integral(&times, |s| pp.psi(s) * (p2 * (s - big_t)).exp());
    let mut hprime = Vec::with_capacity(times.len() * dir.k2.len());
    let mut theta = Vec::with_capacity(times.len() * ing.phase_dim());
    for (j, &t) in times.iter().enumerate() {
        hprime.extend(ing.hprime_at(t));
        // B B*(BB*)^{-1} k₁ = k₁
        theta.extend(
            dir.k1
                .iter()
                .zip(&dir.bk2)
                .map(|(k1, bk2)| k1 * int1[j] + bk2 * int2[j]),
        );
        theta.extend(ing.htilde_at(t));
    }
    ing.hprime = hprime;
    ing.theta = theta;
    Ok(ing)
}

/// `Σ_j ⟨σ^{-1}(h'(t_j) − ∂_{Θ(t_j)} b(Z_j)), ΔW_j⟩`.
pub fn hamiltonian_weight(
    path: &HamPath,
    noise: &NoisePath,
    ing: &HamIngredients,
    b: &dyn Drift,
    sig: &SigmaOperator,
) -> Result<f64> {
    let steps = path.steps();
    if noise.steps() != steps || ing.grid.steps() != steps {
        return Err(Error::InvalidParameter(format!(
            "path ({steps} steps), noise ({}) and ingredients ({}) disagree",
            noise.steps(),
            ing.grid.steps()
        )));
    }
    let d = path.vel_dim();
    let inv = sig.inverse()?;
    let mut deriv = vec![0.0; d];
    let mut integrand = vec![0.0; d];
    let mut acc = 0.0;
    for j in 0..steps {
        b.dderiv(path.state(j), ing.theta(j), &mut deriv);
        for ((v, h), db) in integrand.iter_mut().zip(ing.hprime(j)).zip(&deriv) {
            *v = h - db;
        }
        acc += inv.inv_dot(&integrand, noise.increment(j));
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::default_phi_psi;
    use approx::assert_relative_eq;

    fn setup(horizon: f64, steps: usize) -> (HamIngredients, HamDirection) {
        let op = SpectralOperator::new(vec![1.0, 4.0]).unwrap();
        let b = DMatrix::identity(2, 2);
        let dir = HamDirection::new(vec![1.0, 0.0], vec![0.0, 1.0], &b, &op).unwrap();
        let (t1, t2) = dir.thetas();
        let pp = default_phi_psi(horizon, t1, t2).unwrap();
        let grid = SimGrid::new(horizon, steps).unwrap();
        (ham_h_theta(&pp, &dir, &grid).unwrap(), dir)
    }

    #[test]
    fn theta_endpoints() {
        let (ing, _) = setup(1.0, 1024);
        assert!(ing.theta(0).iter().all(|v| *v == 0.0));
        let end = ing.theta(1024);
        let expect = [1.0, 0.0, 0.0, 1.0];
        for (a, b) in end.iter().zip(expect) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        let ht = ing.htilde_at(1.0);
        assert_relative_eq!(ht[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(ht[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn coarse_grid_still_hits_endpoint() {
        let (ing, _) = setup(1.3, 8);
        let end = ing.theta(8);
        for (a, b) in end.iter().zip([1.0, 0.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn non_eigen_direction_is_rejected() {
        let op = SpectralOperator::new(vec![1.0, 4.0]).unwrap();
        let b = DMatrix::identity(2, 2);
        assert!(matches!(
            HamDirection::new(vec![1.0, 1.0], vec![0.0, 1.0], &b, &op),
            Err(Error::Constraint(_))
        ));
        assert!(HamDirection::new(vec![0.0, 0.0], vec![0.0, 0.0], &b, &op).is_err());
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert!(HamDirection::new(vec![1.0, 0.0], vec![0.0, 1.0], &singular, &op).is_err());
    }

    #[test]
    fn mismatched_profiles_are_rejected() {
        let op = SpectralOperator::new(vec![1.0, 4.0]).unwrap();
        let b = DMatrix::identity(2, 2);
        let dir = HamDirection::new(vec![1.0, 0.0], vec![0.0, 1.0], &b, &op).unwrap();
        let pp = default_phi_psi(1.0, 0.0, 0.0).unwrap();
        let grid = SimGrid::new(1.0, 16).unwrap();
        assert!(ham_h_theta(&pp, &dir, &grid).is_err());
    }

    #[test]
    fn htilde_is_convolution_of_hprime() {
        // h̃(t) = ∫_0^t e^{(t−s)A} h'(s) ds, checked by quadrature
        let (ing, _) = setup(1.0, 64);
        let lam = [1.0, 4.0];
        for t in [0.3, 0.7, 1.0] {
            let ht = ing.htilde_at(t);
            for i in 0..2 {
                let v = crate::quad::integrate_adaptive(
                    |s| (-lam[i] * (t - s)).exp() * ing.hprime_at(s)[i],
                    0.0,
                    t,
                    1e-13,
                );
                assert_relative_eq!(v, ht[i], epsilon = 1e-10);
            }
        }
    }
}
