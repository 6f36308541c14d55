use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::drift::Drift;
use crate::error::{Error, Result};
use crate::simulate::HamiltonianSystem;

/// Stationary covariance of `dZ = F Z dt + S dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSolution {
    pub cov: DMatrix<f64>,
    /// Frobenius norm of `FC + CF* + SS*`.
    pub residual: f64,
}

/// Largest real part of the spectrum of `f`.
pub fn spectral_abscissa(f: &DMatrix<f64>) -> f64 {
    f.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Solve `F C + C F* + S S* = 0` through the vectorised system
/// `(I ⊗ F + F ⊗ I) vec C = −vec(S S*)`.
pub fn lyapunov_stationary_cov(f: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<LyapunovSolution> {
    let m = f.nrows();
    if f.ncols() != m || s.nrows() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: if f.ncols() != m { f.ncols() } else { s.nrows() },
        });
    }
    let abscissa = spectral_abscissa(f);
    if !(abscissa < 0.0) {
        return Err(Error::NotHurwitz(abscissa));
    }
    let id = DMatrix::<f64>::identity(m, m);
    let kron = id.kronecker(f) + f.kronecker(&id);
    let q = s * s.transpose();
    let rhs = -DVector::from_column_slice(q.as_slice());
    let vec_c = kron
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Constraint("Lyapunov operator is singular".into()))?;
    let c = DMatrix::from_column_slice(m, m, vec_c.as_slice());
    let cov = (&c + c.transpose()) * 0.5;
    if Cholesky::new(cov.clone()).is_none() {
        return Err(Error::Constraint(
            "stationary covariance is not positive definite (degenerate noise?)".into(),
        ));
    }
    let residual = (f * &cov + &cov * f.transpose() + q).norm();
    Ok(LyapunovSolution { cov, residual })
}

/// Jacobian of a drift at the origin, and the largest deviation of
/// `b(z) − b(0) − J z` over a few probe points (zero for linear drifts).
pub fn linear_part(b: &dyn Drift) -> (DMatrix<f64>, f64) {
    let (n_in, n_out) = (b.in_dim(), b.out_dim());
    let zero = vec![0.0; n_in];
    let mut jac = DMatrix::zeros(n_out, n_in);
    let mut unit = vec![0.0; n_in];
    let mut col = vec![0.0; n_out];
    for j in 0..n_in {
        unit[j] = 1.0;
        b.dderiv(&zero, &unit, &mut col);
        unit[j] = 0.0;
        jac.column_mut(j).copy_from_slice(&col);
    }
    let mut b0 = vec![0.0; n_out];
    b.eval(&zero, &mut b0);
    let mut worst = b0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for probe in 1..=3 {
        let z: Vec<f64> = (0..n_in)
            .map(|i| ((probe * 7 + i * 3) as f64 * 0.731).sin() * probe as f64)
            .collect();
        b.eval(&z, &mut col);
        let lin = &jac * DVector::from_column_slice(&z);
        for (a, l) in col.iter().zip(lin.iter()) {
            worst = worst.max((a - l).abs());
        }
    }
    (jac, worst)
}

/// `(F, S)` of a Hamiltonian system whose drift is linear:
/// `F = [[0, B], [L_x, A + L_y]]`, `S = [[0], [σ]]`.
pub fn hamiltonian_linear_matrices(sys: &HamiltonianSystem<'_>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (p, d) = (sys.coupling.nrows(), sys.op.dim());
    let (jac, nonlin) = linear_part(sys.drift);
    if nonlin > 1e-10 * (1.0 + jac.norm()) {
        return Err(Error::Config(format!(
            "drift `{}` is not linear; no Lyapunov reference",
            sys.drift.name()
        )));
    }
    let mut f = DMatrix::zeros(p + d, p + d);
    f.view_mut((0, p), (p, d)).copy_from(sys.coupling);
    f.view_mut((p, 0), (d, p + d)).copy_from(&jac);
    for (i, l) in sys.op.eigenvalues().iter().enumerate() {
        f[(p + i, p + i)] -= l;
    }
    let mut s = DMatrix::zeros(p + d, d);
    s.view_mut((p, 0), (d, d)).copy_from(sys.sig.matrix());
    Ok((f, s))
}

/// Centred Gaussian `N(0, C)`.
#[derive(Debug, Clone)]
pub struct GaussianReference {
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl GaussianReference {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Constraint("covariance is not positive definite".into()))?
            .l();
        Ok(Self { cov, chol })
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let xi = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        (&self.chol * xi).iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{LinearDrift, PhaseBlock, PhaseLift};
    use crate::spectral::{SigmaOperator, SpectralOperator};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    #[test]
    fn scalar_lyapunov() {
        let f = DMatrix::from_element(1, 1, -2.0);
        let s = DMatrix::from_element(1, 1, 0.5);
        let sol = lyapunov_stationary_cov(&f, &s).unwrap();
        assert_relative_eq!(sol.cov[(0, 0)], 0.25 / 4.0, epsilon = 1e-15);
        assert!(sol.residual < 1e-14);
    }

    #[test]
    fn non_hurwitz_is_rejected() {
        let f = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -1.0]);
        let s = DMatrix::identity(2, 2);
        assert!(matches!(lyapunov_stationary_cov(&f, &s), Err(Error::NotHurwitz(_))));
    }

    #[test]
    fn linear_hamiltonian_has_block_diagonal_covariance() {
        // b(x) = A^{-1} Q x with B = σ = I gives C = diag((2Q)^{-1}, −(2A)^{-1})
        let op = SpectralOperator::new(vec![1.0, 4.0]).unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 3.0]);
        let m = DMatrix::from_fn(2, 2, |i, j| -q[(i, j)] / op.eigenvalues()[i]);
        let drift = PhaseLift::new(Arc::new(LinearDrift::new(m)), PhaseBlock::Position, 2, 2).unwrap();
        let coupling = DMatrix::identity(2, 2);
        let sig = SigmaOperator::identity(2);
        let sys = HamiltonianSystem {
            coupling: &coupling,
            op: &op,
            sig: &sig,
            drift: &drift,
        };
        let (f, s) = hamiltonian_linear_matrices(&sys).unwrap();
        let sol = lyapunov_stationary_cov(&f, &s).unwrap();
        assert!(sol.residual < 1e-10);
        let qinv = (q * 2.0).try_inverse().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(sol.cov[(i, j)], qinv[(i, j)], epsilon = 1e-10);
                assert_relative_eq!(sol.cov[(i, 2 + j)], 0.0, epsilon = 1e-10);
            }
            assert_relative_eq!(sol.cov[(2 + i, 2 + i)], 0.5 / op.eigenvalues()[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn gaussian_reference_second_moment() {
        use rand::SeedableRng;
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let g = GaussianReference::new(cov).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 40_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let z = g.sample(&mut rng);
            acc += z[0] * z[1];
        }
        // Var(z0 z1) = c00 c11 + c01² = 0.59
        let se = (0.59f64 / n as f64).sqrt();
        assert!((acc / n as f64 - 0.3).abs() < 4.0 * se);
    }
}
