use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::drift::Drift;
use crate::error::{Error, Result};
use crate::simulate::HamiltonianSystem;
use crate::spectral::SpectralOperator;

/// Candidate stationary density `e^{G(x, y)}` on the phase space.
pub trait LogDensity: Send + Sync {
    fn label(&self) -> String;
    /// `∇G` at `z = (x, y)`.
    fn gradient(&self, z: &[f64]) -> Vec<f64>;
    /// `∇²_y G` at `z`.
    fn hessian_y(&self, z: &[f64]) -> DMatrix<f64>;
}

/// `G(z) = −½ ⟨P z, z⟩` for a precision matrix `P`.
#[derive(Debug, Clone)]
pub struct QuadraticLogDensity {
    label: String,
    precision: DMatrix<f64>,
    pos_dim: usize,
}

impl QuadraticLogDensity {
    pub fn new(label: impl Into<String>, precision: DMatrix<f64>, pos_dim: usize) -> Self {
        Self {
            label: label.into(),
            precision,
            pos_dim,
        }
    }

    /// Candidate with covariance `cov`.
    pub fn from_covariance(label: impl Into<String>, cov: &DMatrix<f64>, pos_dim: usize) -> Result<Self> {
        let precision = cov
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Constraint("covariance is singular".into()))?;
        Ok(Self::new(label, precision, pos_dim))
    }
}

impl LogDensity for QuadraticLogDensity {
    fn label(&self) -> String {
        self.label.clone()
    }
    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        (-(&self.precision * DVector::from_column_slice(z))).iter().copied().collect()
    }
    fn hessian_y(&self, _z: &[f64]) -> DMatrix<f64> {
        let m = self.precision.nrows();
        let d = m - self.pos_dim;
        -self.precision.view((self.pos_dim, self.pos_dim), (d, d)).into_owned()
    }
}

/// `G(x, y) = −c_x V(x) + c_y ⟨Ay, y⟩` where the position drift is the
/// gradient form `b = A^{-1}∇V`, so `∇V = A b(x)`.
#[derive(Debug, Clone)]
pub struct GradientLogDensity {
    label: String,
    c_x: f64,
    c_y: f64,
    drift: Arc<dyn Drift>,
    op: SpectralOperator,
}

impl GradientLogDensity {
    pub fn new(label: impl Into<String>, c_x: f64, c_y: f64, drift: Arc<dyn Drift>, op: &SpectralOperator) -> Self {
        Self {
            label: label.into(),
            c_x,
            c_y,
            drift,
            op: op.clone(),
        }
    }
}

impl LogDensity for GradientLogDensity {
    fn label(&self) -> String {
        self.label.clone()
    }
    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let p = self.drift.in_dim();
        let lambdas = self.op.eigenvalues();
        let mut b = vec![0.0; self.drift.out_dim()];
        self.drift.eval(&z[..p], &mut b);
        let mut g: Vec<f64> = b.iter().zip(lambdas).map(|(b, l)| self.c_x * l * b).collect();
        g.extend(z[p..].iter().zip(lambdas).map(|(y, l)| -2.0 * self.c_y * l * y));
        g
    }
    fn hessian_y(&self, _z: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.op.dim(),
            self.op.eigenvalues().iter().map(|l| -2.0 * self.c_y * l),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpResidual {
    pub candidate: String,
    pub max_abs: f64,
    pub rms: f64,
    pub argmax: Vec<f64>,
    pub points: usize,
}

/// `L*e^G / e^G` for the kinetic generator
/// `L = ⟨By, ∇_x⟩ + ⟨Ay + b(z), ∇_y⟩ + ½ tr(σσ* ∇²_y)`:
/// `−⟨By, ∇_xG⟩ − ⟨Ay + b, ∇_yG⟩ − tr A − div_y b + ½ tr(σσ*(∇²_yG + ∇_yG ∇_yG*))`.
pub fn fp_residual_at(candidate: &dyn LogDensity, sys: &HamiltonianSystem<'_>, z: &[f64]) -> f64 {
    let p = sys.coupling.nrows();
    let d = sys.op.dim();
    let (x_part, y) = z.split_at(p);
    debug_assert_eq!(x_part.len(), p);
    let grad = candidate.gradient(z);
    let (gx, gy) = grad.split_at(p);
    let by = sys.coupling * DVector::from_column_slice(y);
    let mut b = vec![0.0; d];
    sys.drift.eval(z, &mut b);
    let ay = sys.op.apply_a(y).expect("dimension checked");
    let mut div_b = 0.0;
    let mut unit = vec![0.0; p + d];
    let mut col = vec![0.0; d];
    for i in 0..d {
        unit[p + i] = 1.0;
        sys.drift.dderiv(z, &unit, &mut col);
        unit[p + i] = 0.0;
        div_b += col[i];
    }
    let trace_a: f64 = -sys.op.eigenvalues().iter().sum::<f64>();
    let transport: f64 = by.iter().zip(gx).map(|(a, g)| a * g).sum::<f64>()
        + ay.iter().zip(&b).zip(gy).map(|((a, b), g)| (a + b) * g).sum::<f64>();
    let cov = sys.sig.matrix() * sys.sig.matrix().transpose();
    let gyv = DVector::from_column_slice(gy);
    let second = candidate.hessian_y(z) + &gyv * gyv.transpose();
    let diffusion = 0.5 * cov.component_mul(&second).sum();
    -transport - trace_a - div_b + diffusion
}

/// Tensor grid over `[−w, w]^dim` with `per_axis` points per axis.
pub fn phase_grid(dim: usize, half_width: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let per_axis = per_axis.max(2);
    let axis: Vec<f64> = (0..per_axis)
        .map(|i| -half_width + 2.0 * half_width * i as f64 / (per_axis - 1) as f64)
        .collect();
    let total = per_axis.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            (0..dim)
                .map(|_| {
                    let v = axis[idx % per_axis];
                    idx /= per_axis;
                    v
                })
                .collect()
        })
        .collect()
}

/// Largest stationary Fokker–Planck residual of `candidate` over `points`.
pub fn fp_residual(candidate: &dyn LogDensity, sys: &HamiltonianSystem<'_>, points: &[Vec<f64>]) -> Result<FpResidual> {
    let w = sys.coupling.nrows() + sys.op.dim();
    if points.is_empty() {
        return Err(Error::InvalidParameter("empty residual grid".into()));
    }
    let mut max_abs = 0.0f64;
    let mut argmax = points[0].clone();
    let mut sq = 0.0;
    for z in points {
        if z.len() != w {
            return Err(Error::DimensionMismatch {
                expected: w,
                got: z.len(),
            });
        }
        let r = fp_residual_at(candidate, sys, z);
        sq += r * r;
        if !(r.abs() <= max_abs) {
            max_abs = r.abs();
            argmax = z.clone();
        }
    }
    Ok(FpResidual {
        candidate: candidate.label(),
        max_abs,
        rms: (sq / points.len() as f64).sqrt(),
        argmax,
        points: points.len(),
    })
}
