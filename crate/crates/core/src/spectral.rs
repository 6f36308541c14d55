//! Spectral truncation `H_{A,n}`: the operator `A` in its own eigenbasis, the
//! semigroup `e^{tA}`, and the noise operator `σ`.
//!
//! Vectors are coefficient lists over the eigenbasis `{e_i}` of `A`, so `A`
//! is always diagonal and `e^{tA}` is exact.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Coefficients of a vector of `H_{A,n}` in the eigenbasis of `A`.
pub type HVector = Vec<f64>;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && m.iter()
            .enumerate()
            .all(|(idx, v)| idx % m.nrows() == idx / m.nrows() || *v == 0.0)
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `A = -diag(λ_1, ..., λ_n)` with `0 < λ_1 ≤ ... ≤ λ_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOperator {
    eigenvalues: Vec<f64>,
}

impl SpectralOperator {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::InvalidEigenvalues("empty spectrum".into()));
        }
        if let Some(bad) = eigenvalues.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidEigenvalues(format!(
                "eigenvalues of -A must be positive and finite, got {bad}"
            )));
        }
        if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidEigenvalues(
                "eigenvalues must be sorted non-decreasing".into(),
            ));
        }
        Ok(Self { eigenvalues })
    }

    /// `λ_i = i^p`, `i = 1..=n`.
    pub fn power_law(n: usize, p: f64) -> Result<Self> {
        if p < 0.0 {
            return Err(Error::InvalidEigenvalues(format!(
                "power-law exponent must be non-negative, got {p}"
            )));
        }
        Self::new((1..=n).map(|i| (i as f64).powf(p)).collect())
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenvalues of `-A`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn apply_a(&self, x: &[f64]) -> Result<HVector> {
        check_dim(self.dim(), x.len())?;
        Ok(x.iter().zip(&self.eigenvalues).map(|(x, l)| -l * x).collect())
    }

    pub fn apply_a_inv(&self, x: &[f64]) -> Result<HVector> {
        check_dim(self.dim(), x.len())?;
        Ok(x.iter().zip(&self.eigenvalues).map(|(x, l)| -x / l).collect())
    }

    pub fn semigroup_apply(&self, t: f64, x: &[f64]) -> Result<HVector> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        check_dim(self.dim(), x.len())?;
        if t == 0.0 {
            return Ok(x.to_vec());
        }
        Ok(x
            .iter()
            .zip(&self.eigenvalues)
            .map(|(x, l)| (-l * t).exp() * x)
            .collect())
    }

    /// `e^{tA}` for any real `t`; negative times are used by the delay shift
    /// `Γ`, which only ever applies them to finite truncations.
    pub fn exp_apply_signed(&self, t: f64, x: &[f64]) -> HVector {
        x.iter()
            .zip(&self.eigenvalues)
            .map(|(x, l)| (-l * t).exp() * x)
            .collect()
    }

    /// Dense matrix of `A` (diagonal).
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.dim(),
            self.eigenvalues.iter().map(|l| -l),
        ))
    }
}

/// Precomputed inverse structure of an invertible `σ`.
#[derive(Debug, Clone)]
struct SigmaInverse {
    inv: DMatrix<f64>,
    sqrt_cov: DMatrix<f64>,
    inv_sqrt_cov: DMatrix<f64>,
    inv_norm: f64,
}

/// Noise operator `σ` on the truncation, with `√(σσ*)`, its inverse and
/// `σ^{-1}` precomputed. Diagonal `σ` takes a fast path in all applications.
#[derive(Debug, Clone)]
pub struct SigmaOperator {
    matrix: DMatrix<f64>,
    diagonal: Option<Vec<f64>>,
    op_norm: f64,
    inverse: Option<SigmaInverse>,
}

/// Eigenvalues of `σσ*` below this floor are treated as zero.
pub const SIGMA_EIGEN_FLOOR: f64 = 1e-12;

impl SigmaOperator {
    pub fn identity(n: usize) -> Self {
        Self::diagonal(vec![1.0; n]).expect("identity is invertible")
    }

    pub fn diagonal(values: Vec<f64>) -> Result<Self> {
        let op = Self::diagonal_unchecked(values);
        op.require_inverse()?;
        Ok(op)
    }

    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        let op = Self::dense_unchecked(matrix)?;
        op.require_inverse()?;
        Ok(op)
    }

    /// A possibly singular `σ` (e.g. `σ = 0`) usable for simulation only.
    /// Every operation that needs an inverse returns [`Error::SingularSigma`].
    pub fn noise_only(matrix: DMatrix<f64>) -> Result<Self> {
        if is_diagonal(&matrix) {
            return Ok(Self::diagonal_unchecked(matrix.diagonal().iter().copied().collect()));
        }
        Self::dense_unchecked(matrix)
    }

    fn diagonal_unchecked(values: Vec<f64>) -> Self {
        let n = values.len();
        let matrix = DMatrix::from_diagonal(&DVector::from_vec(values.clone()));
        let op_norm = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min_abs = values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let inverse = (min_abs * min_abs >= SIGMA_EIGEN_FLOOR).then(|| SigmaInverse {
            inv: DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / values[i] } else { 0.0 }),
            sqrt_cov: DMatrix::from_fn(n, n, |i, j| if i == j { values[i].abs() } else { 0.0 }),
            inv_sqrt_cov: DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    1.0 / values[i].abs()
                } else {
                    0.0
                }
            }),
            inv_norm: 1.0 / min_abs,
        });
        Self {
            matrix,
            diagonal: Some(values),
            op_norm,
            inverse,
        }
    }

    fn dense_unchecked(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        let cov = &matrix * matrix.transpose();
        let cov = 0.5 * (&cov + cov.transpose());
        let eig = SymmetricEigen::new(cov);
        let max_eig = eig.eigenvalues.max();
        let min_eig = eig.eigenvalues.min();
        let op_norm = max_eig.max(0.0).sqrt();
        let inverse = if min_eig >= SIGMA_EIGEN_FLOOR {
            let q = &eig.eigenvectors;
            let root = eig.eigenvalues.map(f64::sqrt);
            let sqrt_cov = q * DMatrix::from_diagonal(&root) * q.transpose();
            let inv_sqrt_cov =
                q * DMatrix::from_diagonal(&root.map(|r| 1.0 / r)) * q.transpose();
            // σ^{-1} = σ*(σσ*)^{-1}
            let cov_inv =
                q * DMatrix::from_diagonal(&eig.eigenvalues.map(|e| 1.0 / e)) * q.transpose();
            let inv = matrix.transpose() * cov_inv;
            Some(SigmaInverse {
                inv,
                sqrt_cov,
                inv_sqrt_cov,
                inv_norm: 1.0 / min_eig.sqrt(),
            })
        } else {
            None
        };
        let diagonal = is_diagonal(&matrix)
            .then(|| matrix.diagonal().iter().copied().collect());
        Ok(Self {
            matrix,
            diagonal,
            op_norm,
            inverse,
        })
    }

    fn require_inverse(&self) -> Result<&SigmaInverse> {
        self.inverse.as_ref().ok_or_else(|| Error::SingularSigma {
            min_eig: self.min_cov_eigenvalue(),
        })
    }

    fn min_cov_eigenvalue(&self) -> f64 {
        let cov = &self.matrix * self.matrix.transpose();
        SymmetricEigen::new(cov).eigenvalues.min()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn diagonal_values(&self) -> Option<&[f64]> {
        self.diagonal.as_deref()
    }

    pub fn is_invertible(&self) -> bool {
        self.inverse.is_some()
    }

    /// Largest singular value `‖σ‖`.
    pub fn op_norm(&self) -> f64 {
        self.op_norm
    }

    /// `‖σ^{-1}‖`.
    pub fn inv_op_norm(&self) -> Result<f64> {
        Ok(self.require_inverse()?.inv_norm)
    }

    /// `out += σ x`.
    #[inline]
    pub fn apply_add(&self, x: &[f64], out: &mut [f64]) {
        match &self.diagonal {
            Some(d) => {
                for ((o, s), x) in out.iter_mut().zip(d).zip(x) {
                    *o += s * x;
                }
            }
            None => mat_vec_add(&self.matrix, x, out),
        }
    }

    /// Borrowed inverse structure for hot loops; fails if `σ` is singular.
    pub fn inverse(&self) -> Result<SigmaInverseView<'_>> {
        let inv = self.require_inverse()?;
        Ok(SigmaInverseView {
            inv,
            diagonal: self.diagonal.as_deref(),
        })
    }

    /// `‖x‖_σ = |(σσ*)^{-1/2} x|`; the infimum is attained on the truncation.
    pub fn sigma_norm(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let view = self.inverse()?;
        let mut y = vec![0.0; x.len()];
        view.apply_inv_sqrt_cov(x, &mut y);
        Ok(norm(&y))
    }

    /// `√(σσ*) y`.
    pub fn apply_sqrt_cov(&self, y: &[f64]) -> Result<HVector> {
        check_dim(self.dim(), y.len())?;
        let inv = self.require_inverse()?;
        let mut out = vec![0.0; y.len()];
        mat_vec_add(&inv.sqrt_cov, y, &mut out);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SigmaInverseView<'a> {
    inv: &'a SigmaInverse,
    diagonal: Option<&'a [f64]>,
}

impl SigmaInverseView<'_> {
    /// `out = σ^{-1} x`.
    pub fn apply_inv(&self, x: &[f64], out: &mut [f64]) {
        match self.diagonal {
            Some(d) => {
                for ((o, s), x) in out.iter_mut().zip(d).zip(x) {
                    *o = x / s;
                }
            }
            None => {
                out.iter_mut().for_each(|o| *o = 0.0);
                mat_vec_add(&self.inv.inv, x, out);
            }
        }
    }

    /// `out = (σσ*)^{-1/2} x`.
    pub fn apply_inv_sqrt_cov(&self, x: &[f64], out: &mut [f64]) {
        match self.diagonal {
            Some(d) => {
                for ((o, s), x) in out.iter_mut().zip(d).zip(x) {
                    *o = x / s.abs();
                }
            }
            None => {
                out.iter_mut().for_each(|o| *o = 0.0);
                mat_vec_add(&self.inv.inv_sqrt_cov, x, out);
            }
        }
    }

    /// `⟨σ^{-1} v, w⟩` without allocation.
    #[inline]
    pub fn inv_dot(&self, v: &[f64], w: &[f64]) -> f64 {
        match self.diagonal {
            Some(d) => v.iter().zip(d).zip(w).map(|((v, s), w)| v / s * w).sum(),
            None => {
                let m = &self.inv.inv;
                let mut acc = 0.0;
                for i in 0..m.nrows() {
                    let mut row = 0.0;
                    for (j, vj) in v.iter().enumerate() {
                        row += m[(i, j)] * vj;
                    }
                    acc += row * w[i];
                }
                acc
            }
        }
    }

    /// `|σ^{-1} v|²`.
    #[inline]
    pub fn inv_norm_sq(&self, v: &[f64]) -> f64 {
        match self.diagonal {
            Some(d) => v.iter().zip(d).map(|(v, s)| (v / s).powi(2)).sum(),
            None => {
                let m = &self.inv.inv;
                (0..m.nrows())
                    .map(|i| {
                        let r: f64 = v.iter().enumerate().map(|(j, vj)| m[(i, j)] * vj).sum();
                        r * r
                    })
                    .sum()
            }
        }
    }
}

pub(crate) fn mat_vec_add(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, xj) in x.iter().enumerate() {
            acc += m[(i, j)] * xj;
        }
        *o += acc;
    }
}
