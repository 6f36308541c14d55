//! Drift nonlinearities `b` with analytic directional derivatives.
//!
//! Every model exposes `∂_k b(x)` in closed form because the weights
//! differentiate the drift pathwise; drifts without an analytic derivative
//! have to go through [`mollify_directional`].

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::quad::gauss_hermite_normal;
use crate::spectral::{mat_vec_add, norm, SigmaOperator, SpectralOperator};

/// Default Gauss–Hermite node count for the directional mollifier.
pub const DEFAULT_MOLLIFIER_NODES: usize = 21;

pub trait Drift: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;

    /// `out = b(x)`.
    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// `out = ∂_k b(x)`.
    fn dderiv(&self, x: &[f64], k: &[f64], out: &mut [f64]);

    /// Upper bound for `sup_x ‖∂_k b(x)‖_σ`.
    fn sigma_dderiv_bound(&self, k: &[f64], sig: &SigmaOperator) -> Result<f64>;

    /// Operator-norm Lipschitz constant `‖∂b‖_∞`, when known.
    fn lipschitz_const(&self) -> Option<f64>;

    /// Largest `c₂` with `⟨b(x)−b(y), x−y⟩ ≤ −c₂|x−y|²`, when known.
    fn dissipativity(&self) -> Option<f64> {
        None
    }

    /// Description of the integrability modulus `γ(t)`; informational only.
    fn modulus(&self) -> Option<String> {
        None
    }

    /// `b ≡ 0`; lets hot loops skip evaluation.
    fn is_zero(&self) -> bool {
        false
    }
}

/// `sup_x ‖∂_k b(x)‖_σ` for derivatives of the form `diag(d(x)) k` with
/// `|d_i(x)| ≤ bound_i`. Exact for diagonal `σ`.
fn diagonal_jacobian_bound(bound: &[f64], k: &[f64], sig: &SigmaOperator) -> Result<f64> {
    match sig.diagonal_values() {
        Some(s) => {
            if s.iter().any(|v| v.abs() * v.abs() < crate::spectral::SIGMA_EIGEN_FLOOR) {
                return Err(Error::SingularSigma { min_eig: 0.0 });
            }
            Ok(bound
                .iter()
                .zip(k)
                .zip(s)
                .map(|((m, k), s)| (m * k / s).powi(2))
                .sum::<f64>()
                .sqrt())
        }
        None => {
            let v: Vec<f64> = bound.iter().zip(k).map(|(m, k)| m * k).collect();
            Ok(sig.inv_op_norm()? * norm(&v))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ZeroDrift {
    dim: usize,
}

impl ZeroDrift {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Drift for ZeroDrift {
    fn name(&self) -> &str {
        "zero"
    }
    fn in_dim(&self) -> usize {
        self.dim
    }
    fn out_dim(&self) -> usize {
        self.dim
    }
    fn is_zero(&self) -> bool {
        true
    }
    fn eval(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn dderiv(&self, _x: &[f64], _k: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn sigma_dderiv_bound(&self, _k: &[f64], _sig: &SigmaOperator) -> Result<f64> {
        Ok(0.0)
    }
    fn lipschitz_const(&self) -> Option<f64> {
        Some(0.0)
    }
    fn dissipativity(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// `b(x) = M x`; `M` may be rectangular (e.g. acting on a phase-space state).
#[derive(Debug, Clone)]
pub struct LinearDrift {
    matrix: DMatrix<f64>,
    op_norm: f64,
}

impl LinearDrift {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        let op_norm = matrix.clone().svd(false, false).singular_values.max();
        Self { matrix, op_norm }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl Drift for LinearDrift {
    fn name(&self) -> &str {
        "linear"
    }
    fn in_dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn out_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        mat_vec_add(&self.matrix, x, out);
    }
    fn dderiv(&self, _x: &[f64], k: &[f64], out: &mut [f64]) {
        self.eval(k, out);
    }
    fn sigma_dderiv_bound(&self, k: &[f64], sig: &SigmaOperator) -> Result<f64> {
        let mut mk = vec![0.0; self.out_dim()];
        self.eval(k, &mut mk);
        sig.sigma_norm(&mk)
    }
    fn lipschitz_const(&self) -> Option<f64> {
        Some(self.op_norm)
    }
    fn dissipativity(&self) -> Option<f64> {
        if !self.matrix.is_square() {
            return None;
        }
        let sym = 0.5 * (&self.matrix + self.matrix.transpose());
        Some(-SymmetricEigen::new(sym).eigenvalues.max())
    }
    fn modulus(&self) -> Option<String> {
        Some(format!("gamma(t) = {:.6} (constant)", self.op_norm))
    }
}

/// `b_i(x) = c sin(x_i)`.
#[derive(Debug, Clone)]
pub struct SineDrift {
    dim: usize,
    c: f64,
}

impl SineDrift {
    pub fn new(dim: usize, c: f64) -> Self {
        Self { dim, c }
    }
}

impl Drift for SineDrift {
    fn name(&self) -> &str {
        "sine"
    }
    fn in_dim(&self) -> usize {
        self.dim
    }
    fn out_dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(x) {
            *o = self.c * x.sin();
        }
    }
    fn dderiv(&self, x: &[f64], k: &[f64], out: &mut [f64]) {
        for ((o, x), k) in out.iter_mut().zip(x).zip(k) {
            *o = self.c * x.cos() * k;
        }
    }
    fn sigma_dderiv_bound(&self, k: &[f64], sig: &SigmaOperator) -> Result<f64> {
        diagonal_jacobian_bound(&vec![self.c.abs(); self.dim], k, sig)
    }
    fn lipschitz_const(&self) -> Option<f64> {
        Some(self.c.abs())
    }
    fn dissipativity(&self) -> Option<f64> {
        Some(-self.c.abs())
    }
    fn modulus(&self) -> Option<String> {
        Some(format!("gamma(t) = {:.6} (constant)", self.c.abs()))
    }
}

/// `b(x) = A^{-1} ∇V(x)` with `V(x) = Σ_i (a_i x_i²/2 + δ cos x_i)`.
#[derive(Debug, Clone)]
pub struct GibbsGradient {
    a: Vec<f64>,
    delta: f64,
    lambdas: Vec<f64>,
}

impl GibbsGradient {
    pub fn new(a: Vec<f64>, delta: f64, op: &SpectralOperator) -> Result<Self> {
        if a.len() != op.dim() {
            return Err(Error::DimensionMismatch {
                expected: op.dim(),
                got: a.len(),
            });
        }
        Ok(Self {
            a,
            delta,
            lambdas: op.eigenvalues().to_vec(),
        })
    }

    pub fn coefficients(&self) -> (&[f64], f64) {
        (&self.a, self.delta)
    }

    pub fn potential(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.a)
            .map(|(x, a)| 0.5 * a * x * x + self.delta * x.cos())
            .sum()
    }

    /// `∂_i V(x)`.
    pub fn potential_grad(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.a)
            .map(|(x, a)| a * x - self.delta * x.sin())
            .collect()
    }

    /// Diagonal of the Hessian of `V`.
    pub fn potential_hess_diag(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.a)
            .map(|(x, a)| a - self.delta * x.cos())
            .collect()
    }
}

impl Drift for GibbsGradient {
    fn name(&self) -> &str {
        "gibbs_gradient"
    }
    fn in_dim(&self) -> usize {
        self.a.len()
    }
    fn out_dim(&self) -> usize {
        self.a.len()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = -(self.a[i] * x[i] - self.delta * x[i].sin()) / self.lambdas[i];
        }
    }
    fn dderiv(&self, x: &[f64], k: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = -(self.a[i] - self.delta * x[i].cos()) / self.lambdas[i] * k[i];
        }
    }
    fn sigma_dderiv_bound(&self, k: &[f64], sig: &SigmaOperator) -> Result<f64> {
        let bound: Vec<f64> = self
            .a
            .iter()
            .zip(&self.lambdas)
            .map(|(a, l)| (a.abs() + self.delta.abs()) / l)
            .collect();
        diagonal_jacobian_bound(&bound, k, sig)
    }
    fn lipschitz_const(&self) -> Option<f64> {
        Some(
            self.a
                .iter()
                .zip(&self.lambdas)
                .map(|(a, l)| (a.abs() + self.delta.abs()) / l)
                .fold(0.0, f64::max),
        )
    }
    fn dissipativity(&self) -> Option<f64> {
        Some(
            self.a
                .iter()
                .zip(&self.lambdas)
                .map(|(a, l)| (a - self.delta.abs()) / l)
                .fold(f64::INFINITY, f64::min),
        )
    }
}

/// Which block of a phase-space state `(x, y)` a drift reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum PhaseBlock {
    #[default]
    Position,
    Velocity,
}

/// Lifts a drift on one block to the phase space `H̃ × H`.
#[derive(Debug, Clone)]
pub struct PhaseLift {
    inner: Arc<dyn Drift>,
    block: PhaseBlock,
    pos_dim: usize,
    vel_dim: usize,
}

impl PhaseLift {
    pub fn new(inner: Arc<dyn Drift>, block: PhaseBlock, pos_dim: usize, vel_dim: usize) -> Result<Self> {
        let expected = match block {
            PhaseBlock::Position => pos_dim,
            PhaseBlock::Velocity => vel_dim,
        };
        if inner.in_dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: inner.in_dim(),
            });
        }
        if inner.out_dim() != vel_dim {
            return Err(Error::DimensionMismatch {
                expected: vel_dim,
                got: inner.out_dim(),
            });
        }
        Ok(Self {
            inner,
            block,
            pos_dim,
            vel_dim,
        })
    }

    pub fn inner(&self) -> &Arc<dyn Drift> {
        &self.inner
    }

    fn part<'a>(&self, z: &'a [f64]) -> &'a [f64] {
        match self.block {
            PhaseBlock::Position => &z[..self.pos_dim],
            PhaseBlock::Velocity => &z[self.pos_dim..],
        }
    }
}

impl Drift for PhaseLift {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn in_dim(&self) -> usize {
        self.pos_dim + self.vel_dim
    }
    fn out_dim(&self) -> usize {
        self.vel_dim
    }
    fn eval(&self, z: &[f64], out: &mut [f64]) {
        self.inner.eval(self.part(z), out);
    }
    fn dderiv(&self, z: &[f64], k: &[f64], out: &mut [f64]) {
        self.inner.dderiv(self.part(z), self.part(k), out);
    }
    fn sigma_dderiv_bound(&self, k: &[f64], sig: &SigmaOperator) -> Result<f64> {
        self.inner.sigma_dderiv_bound(self.part(k), sig)
    }
    fn lipschitz_const(&self) -> Option<f64> {
        self.inner.lipschitz_const()
    }
}

/// Gaussian smoothing of `b` along `k`:
/// `b_ε(x) = E[b(x + √ε Z k)]`, `Z ~ N(0,1)`, by Gauss–Hermite quadrature.
///
/// Along `k` the derivative is taken on the kernel,
/// `∂_k b_ε(x) = E[Z b(x + √ε Z k)] / √ε`, so only evaluations of `b` enter.
/// Components orthogonal to `k` use the inner model's derivative.
#[derive(Debug, Clone)]
pub struct Mollified {
    inner: Arc<dyn Drift>,
    direction: Vec<f64>,
    dir_norm_sq: f64,
    eps: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

pub fn mollify_directional(
    b: Arc<dyn Drift>,
    k: &[f64],
    eps: f64,
    nodes: usize,
) -> Result<Mollified> {
    if nodes < 3 {
        return Err(Error::InvalidParameter(format!(
            "mollifier needs at least 3 nodes, got {nodes}"
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "mollifier width must be positive, got {eps}"
        )));
    }
    if k.len() != b.in_dim() {
        return Err(Error::DimensionMismatch {
            expected: b.in_dim(),
            got: k.len(),
        });
    }
    let dir_norm_sq = k.iter().map(|v| v * v).sum::<f64>();
    if dir_norm_sq == 0.0 {
        return Err(Error::InvalidParameter("mollifier direction is zero".into()));
    }
    let (z, w) = gauss_hermite_normal(nodes);
    Ok(Mollified {
        inner: b,
        direction: k.to_vec(),
        dir_norm_sq,
        eps,
        nodes: z,
        weights: w,
    })
}

impl Mollified {
    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn shifted(&self, x: &[f64], z: f64, buf: &mut [f64]) {
        let s = self.eps.sqrt() * z;
        for ((b, x), k) in buf.iter_mut().zip(x).zip(&self.direction) {
            *b = x + s * k;
        }
    }
}

impl Drift for Mollified {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn in_dim(&self) -> usize {
        self.inner.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.inner.out_dim()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let mut shifted = vec![0.0; x.len()];
        let mut val = vec![0.0; out.len()];
        out.iter_mut().for_each(|o| *o = 0.0);
        for (z, w) in self.nodes.iter().zip(&self.weights) {
            self.shifted(x, *z, &mut shifted);
            self.inner.eval(&shifted, &mut val);
            for (o, v) in out.iter_mut().zip(&val) {
                *o += w * v;
            }
        }
    }
    fn dderiv(&self, x: &[f64], k: &[f64], out: &mut [f64]) {
        let along = k.iter().zip(&self.direction).map(|(a, b)| a * b).sum::<f64>() / self.dir_norm_sq;
        let perp: Vec<f64> = k
            .iter()
            .zip(&self.direction)
            .map(|(k, d)| k - along * d)
            .collect();
        let has_perp = perp.iter().any(|v| *v != 0.0);
        let mut shifted = vec![0.0; x.len()];
        let mut val = vec![0.0; out.len()];
        let inv_root = 1.0 / self.eps.sqrt();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (z, w) in self.nodes.iter().zip(&self.weights) {
            self.shifted(x, *z, &mut shifted);
            if along != 0.0 {
                self.inner.eval(&shifted, &mut val);
                let c = w * z * inv_root * along;
                for (o, v) in out.iter_mut().zip(&val) {
                    *o += c * v;
                }
            }
            if has_perp {
                self.inner.dderiv(&shifted, &perp, &mut val);
                for (o, v) in out.iter_mut().zip(&val) {
                    *o += w * v;
                }
            }
        }
    }
    fn sigma_dderiv_bound(&self, k: &[f64], sig: &SigmaOperator) -> Result<f64> {
        // Averaging cannot increase the supremum of the derivative.
        self.inner.sigma_dderiv_bound(k, sig)
    }
    fn lipschitz_const(&self) -> Option<f64> {
        self.inner.lipschitz_const()
    }
    fn dissipativity(&self) -> Option<f64> {
        self.inner.dissipativity()
    }
}

/// View of a segment `ξ ∈ C([−τ,0]; H_{A,n})` sampled on a uniform grid of
/// `lags + 1` nodes; node 0 is `θ = −τ`, the last node is `θ = 0`.
#[derive(Debug, Clone, Copy)]
pub struct SegmentView<'a> {
    values: &'a [f64],
    dim: usize,
    dt: f64,
}

impl<'a> SegmentView<'a> {
    pub fn new(values: &'a [f64], dim: usize, dt: f64) -> Self {
        debug_assert!(values.len().is_multiple_of(dim));
        Self { values, dim, dt }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn tau(&self) -> f64 {
        (self.nodes() - 1) as f64 * self.dt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn node(&self, idx: usize) -> &'a [f64] {
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn raw(&self) -> &'a [f64] {
        self.values
    }

    /// `ξ(θ)` for `θ ∈ [−τ, 0]`, linear between grid nodes.
    pub fn at(&self, theta: f64) -> Vec<f64> {
        let last = self.nodes() - 1;
        let pos = ((theta + self.tau()) / self.dt).clamp(0.0, last as f64);
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        if lo >= last || frac < 1e-12 {
            return self.node(lo.min(last)).to_vec();
        }
        if frac > 1.0 - 1e-12 {
            return self.node(lo + 1).to_vec();
        }
        self.node(lo)
            .iter()
            .zip(self.node(lo + 1))
            .map(|(a, b)| a + frac * (b - a))
            .collect()
    }
}

/// Drift on segments, `b: C_τ → H`.
pub trait SegmentDrift: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn tau(&self) -> f64;
    fn eval(&self, seg: &SegmentView<'_>, out: &mut [f64]);
    /// `out = ∇_η b(ξ)` for a segment direction `η`.
    fn dderiv(&self, seg: &SegmentView<'_>, dir: &SegmentView<'_>, out: &mut [f64]);
    fn sigma_dderiv_bound(&self, dir: &SegmentView<'_>, sig: &SigmaOperator) -> Result<f64>;
    fn lipschitz_const(&self) -> Option<f64>;
}

/// `b(ξ) = F(ξ(−τ))` with `F_i(x) = c tanh(x_i)`.
#[derive(Debug, Clone)]
pub struct DelayTerminal {
    dim: usize,
    c: f64,
    tau: f64,
}

impl DelayTerminal {
    pub fn new(dim: usize, c: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "delay_terminal needs tau > 0, got {tau}"
            )));
        }
        Ok(Self { dim, c, tau })
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

impl SegmentDrift for DelayTerminal {
    fn name(&self) -> &str {
        "delay_terminal"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn tau(&self) -> f64 {
        self.tau
    }
    fn eval(&self, seg: &SegmentView<'_>, out: &mut [f64]) {
        let past = seg.at(-self.tau);
        for (o, x) in out.iter_mut().zip(&past) {
            *o = self.c * x.tanh();
        }
    }
    fn dderiv(&self, seg: &SegmentView<'_>, dir: &SegmentView<'_>, out: &mut [f64]) {
        let past = seg.at(-self.tau);
        let eta = dir.at(-self.tau);
        for ((o, x), e) in out.iter_mut().zip(&past).zip(&eta) {
            let s = 1.0 / x.cosh();
            *o = self.c * s * s * e;
        }
    }
    fn sigma_dderiv_bound(&self, dir: &SegmentView<'_>, sig: &SigmaOperator) -> Result<f64> {
        diagonal_jacobian_bound(&vec![self.c.abs(); self.dim], &dir.at(-self.tau), sig)
    }
    fn lipschitz_const(&self) -> Option<f64> {
        Some(self.c.abs())
    }
}

/// A registry entry: either a state drift or a segment drift.
#[derive(Debug, Clone)]
pub enum DriftModel {
    State(Arc<dyn Drift>),
    Segment(Arc<dyn SegmentDrift>),
}

impl DriftModel {
    pub fn state(self) -> Result<Arc<dyn Drift>> {
        match self {
            DriftModel::State(b) => Ok(b),
            DriftModel::Segment(b) => Err(Error::Config(format!(
                "drift `{}` acts on segments, a state drift is required",
                b.name()
            ))),
        }
    }

    pub fn segment(self) -> Result<Arc<dyn SegmentDrift>> {
        match self {
            DriftModel::Segment(b) => Ok(b),
            DriftModel::State(b) => Err(Error::Config(format!(
                "drift `{}` acts on states, a segment drift is required",
                b.name()
            ))),
        }
    }
}

pub const REGISTRY_NAMES: [&str; 5] = ["zero", "linear", "sine", "gibbs_gradient", "delay_terminal"];

fn param_f64(params: &Value, key: &str) -> Result<Option<f64>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::InvalidParameter(format!("`{key}` must be a number"))),
    }
}

fn param_vec(params: &Value, key: &str, n: usize) -> Result<Option<Vec<f64>>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(x)) => Ok(Some(vec![x.as_f64().unwrap_or(f64::NAN); n])),
        Some(Value::Array(xs)) => {
            let v: Option<Vec<f64>> = xs.iter().map(Value::as_f64).collect();
            let v = v.ok_or_else(|| Error::InvalidParameter(format!("`{key}` must hold numbers")))?;
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
            Ok(Some(v))
        }
        Some(_) => Err(Error::InvalidParameter(format!(
            "`{key}` must be a number or an array"
        ))),
    }
}

fn param_matrix(params: &Value, key: &str) -> Result<Option<DMatrix<f64>>> {
    let Some(rows) = params.get(key) else {
        return Ok(None);
    };
    let rows = rows
        .as_array()
        .ok_or_else(|| Error::InvalidParameter(format!("`{key}` must be an array of rows")))?;
    let parsed: Option<Vec<Vec<f64>>> = rows
        .iter()
        .map(|r| r.as_array().and_then(|r| r.iter().map(Value::as_f64).collect()))
        .collect();
    let parsed = parsed.ok_or_else(|| Error::InvalidParameter(format!("`{key}` must hold numeric rows")))?;
    let nrows = parsed.len();
    let ncols = parsed.first().map_or(0, Vec::len);
    if nrows == 0 || parsed.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidParameter(format!("`{key}` is ragged or empty")));
    }
    Ok(Some(DMatrix::from_fn(nrows, ncols, |i, j| parsed[i][j])))
}

/// Look up a registry drift. `params` is a JSON object; recognised keys:
///
/// * `linear`: `matrix` (rows), or `q` for `b(x) = A^{-1} Q x`
/// * `sine`: `c`
/// * `gibbs_gradient`: `a` (number or per-mode array, default 1), `delta` (default 0)
/// * `delay_terminal`: `c`, `tau` (required, > 0)
pub fn registry_get(name: &str, params: &Value, op: &SpectralOperator) -> Result<DriftModel> {
    let n = op.dim();
    if !(params.is_object() || params.is_null()) {
        return Err(Error::InvalidParameter("drift params must be an object".into()));
    }
    let finite = |key: &str, v: f64| -> Result<f64> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::InvalidParameter(format!("`{key}` must be finite")))
        }
    };
    match name {
        "zero" => Ok(DriftModel::State(Arc::new(ZeroDrift::new(n)))),
        "linear" => {
            let m = match (param_matrix(params, "matrix")?, param_matrix(params, "q")?) {
                (Some(m), None) => m,
                // b(x) = A^{-1} Q x
                (None, Some(q)) => DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| {
                    -q[(i, j)] / op.eigenvalues().get(i).copied().unwrap_or(f64::NAN)
                }),
                _ => {
                    return Err(Error::InvalidParameter(
                        "linear drift needs exactly one of `matrix` or `q`".into(),
                    ))
                }
            };
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("`matrix` must be finite".into()));
            }
            if m.nrows() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: m.nrows(),
                });
            }
            Ok(DriftModel::State(Arc::new(LinearDrift::new(m))))
        }
        "sine" => {
            let c = finite("c", param_f64(params, "c")?.unwrap_or(1.0))?;
            Ok(DriftModel::State(Arc::new(SineDrift::new(n, c))))
        }
        "gibbs_gradient" => {
            let a = param_vec(params, "a", n)?.unwrap_or_else(|| vec![1.0; n]);
            for v in &a {
                finite("a", *v)?;
            }
            let delta = finite("delta", param_f64(params, "delta")?.unwrap_or(0.0))?;
            Ok(DriftModel::State(Arc::new(GibbsGradient::new(a, delta, op)?)))
        }
        "delay_terminal" => {
            let c = finite("c", param_f64(params, "c")?.unwrap_or(1.0))?;
            let tau = param_f64(params, "tau")?
                .ok_or_else(|| Error::InvalidParameter("delay_terminal needs `tau`".into()))?;
            Ok(DriftModel::Segment(Arc::new(DelayTerminal::new(n, c, tau)?)))
        }
        other => Err(Error::UnknownDrift(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use serde_json::json;

    fn op(n: usize) -> SpectralOperator {
        SpectralOperator::power_law(n, 2.0).unwrap()
    }

    fn state_models(n: usize) -> Vec<Arc<dyn Drift>> {
        let o = op(n);
        let m: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| 0.3 * (i as f64 - j as f64) + if i == j { -1.0 } else { 0.1 }).collect())
            .collect();
        vec![
            registry_get("zero", &json!({}), &o).unwrap().state().unwrap(),
            registry_get("linear", &json!({"matrix": m}), &o).unwrap().state().unwrap(),
            registry_get("sine", &json!({"c": 0.5}), &o).unwrap().state().unwrap(),
            registry_get("gibbs_gradient", &json!({"a": 1.5, "delta": 0.4}), &o)
                .unwrap()
                .state()
                .unwrap(),
        ]
    }

    #[test]
    fn zero_and_sine_examples() {
        let o = op(3);
        let z = registry_get("zero", &json!({}), &o).unwrap().state().unwrap();
        let mut out = vec![1.0; 3];
        z.eval(&[1.0, 2.0, 3.0], &mut out);
        assert_eq!(out, vec![0.0; 3]);

        let s = registry_get("sine", &json!({"c": 0.5}), &op(1)).unwrap().state().unwrap();
        let mut d = [0.0];
        s.dderiv(&[0.7], &[2.0], &mut d);
        assert_relative_eq!(d[0], 0.5 * 0.7f64.cos() * 2.0, epsilon = 1e-15);
    }

    #[test]
    fn delay_terminal_reads_the_lagged_node() {
        let o = op(2);
        let b = registry_get("delay_terminal", &json!({"c": 1.0, "tau": 0.5}), &o)
            .unwrap()
            .segment()
            .unwrap();
        // grid dt = 0.25 => nodes at θ = -0.5, -0.25, 0
        let vals = [0.3, -1.0, 5.0, 5.0, 7.0, 7.0];
        let seg = SegmentView::new(&vals, 2, 0.25);
        let mut out = [0.0; 2];
        b.eval(&seg, &mut out);
        assert_relative_eq!(out[0], 0.3f64.tanh(), epsilon = 1e-15);
        assert_relative_eq!(out[1], (-1.0f64).tanh(), epsilon = 1e-15);
    }

    #[test]
    fn registry_errors() {
        let o = op(2);
        assert!(matches!(
            registry_get("cubic", &json!({}), &o),
            Err(Error::UnknownDrift(_))
        ));
        assert!(matches!(
            registry_get("delay_terminal", &json!({"c": 1.0}), &o),
            Err(Error::InvalidParameter(_))
        ));
        assert!(registry_get("delay_terminal", &json!({"tau": 0.0}), &o).is_err());
        assert!(registry_get("linear", &json!({}), &o).is_err());
        assert!(registry_get("linear", &json!({"matrix": [[1.0]]}), &o).is_err());
        assert!(registry_get("gibbs_gradient", &json!({"a": [1.0]}), &o).is_err());
    }

    #[test]
    fn mollified_linear_is_exact() {
        let o = op(2);
        let b = registry_get("linear", &json!({"matrix": [[1.0, 2.0], [-0.5, 3.0]]}), &o)
            .unwrap()
            .state()
            .unwrap();
        for eps in [0.01, 0.5, 3.0] {
            let m = mollify_directional(b.clone(), &[0.6, -0.8], eps, 21).unwrap();
            let x = [0.4, -1.1];
            let (mut a, mut c) = ([0.0; 2], [0.0; 2]);
            m.eval(&x, &mut a);
            b.eval(&x, &mut c);
            for i in 0..2 {
                assert_relative_eq!(a[i], c[i], epsilon = 1e-12);
            }
            for k in [[0.6, -0.8], [1.0, 0.0], [0.2, 0.3]] {
                m.dderiv(&x, &k, &mut a);
                b.dderiv(&x, &k, &mut c);
                for i in 0..2 {
                    assert_relative_eq!(a[i], c[i], epsilon = 1e-11);
                }
            }
        }
    }

    #[test]
    fn mollified_sine_matches_gaussian_smoothing() {
        // E[sin(x + √ε Z)] = e^{-ε/2} sin x
        let b: Arc<dyn Drift> = Arc::new(SineDrift::new(1, 1.0));
        let m = mollify_directional(b, &[1.0], 0.2, 21).unwrap();
        let mut v = [0.0];
        m.eval(&[0.0], &mut v);
        assert!(v[0].abs() < 1e-15);
        m.dderiv(&[0.0], &[1.0], &mut v);
        assert_relative_eq!(v[0], (-0.1f64).exp(), epsilon = 1e-13);
        for x in [-2.0, -0.3, 0.9, 2.5] {
            m.eval(&[x], &mut v);
            assert_relative_eq!(v[0], (-0.1f64).exp() * f64::sin(x), epsilon = 1e-13);
        }
    }

    #[test]
    fn mollifier_error_is_first_order_in_eps() {
        // |e^{-ε/2} - 1| ≤ ε/2, so |b_ε - b| ≤ ε/2 for the unit sine
        let b: Arc<dyn Drift> = Arc::new(SineDrift::new(1, 1.0));
        for eps in [0.1, 0.01, 0.001] {
            let m = mollify_directional(b.clone(), &[1.0], eps, 21).unwrap();
            for i in 0..=40 {
                let x = -4.0 + 0.2 * i as f64;
                let mut v = [0.0];
                m.eval(&[x], &mut v);
                assert!((v[0] - x.sin()).abs() <= 0.5 * eps * (1.0 + 1e-9) + 1e-14);
            }
        }
    }

    #[test]
    fn mollifier_validation() {
        let b: Arc<dyn Drift> = Arc::new(SineDrift::new(2, 1.0));
        assert!(mollify_directional(b.clone(), &[1.0, 0.0], 0.1, 2).is_err());
        assert!(mollify_directional(b.clone(), &[1.0, 0.0], 0.0, 21).is_err());
        assert!(mollify_directional(b.clone(), &[0.0, 0.0], 0.1, 21).is_err());
        assert!(mollify_directional(b, &[1.0], 0.1, 21).is_err());
    }

    #[test]
    fn mollified_bounds_do_not_depend_on_eps() {
        let sig = SigmaOperator::diagonal(vec![1.0, 0.5]).unwrap();
        let b: Arc<dyn Drift> = Arc::new(SineDrift::new(2, 0.7));
        let k = [1.0, 1.0];
        let base = b.sigma_dderiv_bound(&k, &sig).unwrap();
        for eps in [1.0, 0.1, 1e-4] {
            let m = mollify_directional(b.clone(), &k, eps, 21).unwrap();
            assert_eq!(m.sigma_dderiv_bound(&k, &sig).unwrap(), base);
        }
    }

    #[test]
    fn sigma_bounds_dominate_sampled_derivatives() {
        let n = 3;
        let sigs = [
            SigmaOperator::diagonal(vec![1.0, 0.7, 0.4]).unwrap(),
            SigmaOperator::dense(DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.1, 0.8, 0.3, 0.0, -0.2, 0.9]))
                .unwrap(),
        ];
        for sig in &sigs {
            for b in state_models(n) {
                let k = [0.5, -1.0, 0.25];
                let bound = b.sigma_dderiv_bound(&k, sig).unwrap();
                let mut d = vec![0.0; n];
                for i in 0..200 {
                    let t = i as f64 * 0.173;
                    let x = [3.0 * t.sin(), 2.0 * (1.3 * t).cos(), t - 17.0];
                    b.dderiv(&x, &k, &mut d);
                    assert!(sig.sigma_norm(&d).unwrap() <= bound * (1.0 + 1e-12) + 1e-14, "{}", b.name());
                }
            }
        }
    }

    proptest! {
        #[test]
        fn finite_differences_match_dderiv(
            x in proptest::collection::vec(-3.0f64..3.0, 3),
            k in proptest::collection::vec(-1.0f64..1.0, 3),
            alpha in -3.0f64..3.0,
        ) {
            let h = 1e-4;
            for b in state_models(3) {
                let mut d = vec![0.0; 3];
                b.dderiv(&x, &k, &mut d);
                let xp: Vec<f64> = x.iter().zip(&k).map(|(x, k)| x + h * k).collect();
                let xm: Vec<f64> = x.iter().zip(&k).map(|(x, k)| x - h * k).collect();
                let (mut bp, mut bm) = (vec![0.0; 3], vec![0.0; 3]);
                b.eval(&xp, &mut bp);
                b.eval(&xm, &mut bm);
                for i in 0..3 {
                    let fd = (bp[i] - bm[i]) / (2.0 * h);
                    prop_assert!((fd - d[i]).abs() <= 1e-6 * (1.0 + d[i].abs()), "{} {} {}", b.name(), fd, d[i]);
                }
                // homogeneity
                let ka: Vec<f64> = k.iter().map(|v| alpha * v).collect();
                let mut da = vec![0.0; 3];
                b.dderiv(&x, &ka, &mut da);
                for i in 0..3 {
                    prop_assert!((da[i] - alpha * d[i]).abs() <= 1e-12 * (1.0 + d[i].abs()));
                }
            }
        }

        #[test]
        fn delay_terminal_fd_and_homogeneity(
            past in proptest::collection::vec(-3.0f64..3.0, 2),
            eta in proptest::collection::vec(-1.0f64..1.0, 2),
            alpha in -3.0f64..3.0,
        ) {
            let b = DelayTerminal::new(2, 0.8, 0.5).unwrap();
            let seg_vals = [past[0], past[1], 0.0, 0.0, 1.0, 1.0];
            let dir_vals = [eta[0], eta[1], 9.0, 9.0, 9.0, 9.0];
            let seg = SegmentView::new(&seg_vals, 2, 0.25);
            let dir = SegmentView::new(&dir_vals, 2, 0.25);
            let mut d = [0.0; 2];
            b.dderiv(&seg, &dir, &mut d);
            let h = 1e-4;
            let plus: Vec<f64> = seg_vals.iter().zip(&dir_vals).map(|(a, e)| a + h * e).collect();
            let minus: Vec<f64> = seg_vals.iter().zip(&dir_vals).map(|(a, e)| a - h * e).collect();
            let (mut bp, mut bm) = ([0.0; 2], [0.0; 2]);
            b.eval(&SegmentView::new(&plus, 2, 0.25), &mut bp);
            b.eval(&SegmentView::new(&minus, 2, 0.25), &mut bm);
            for i in 0..2 {
                prop_assert!(((bp[i] - bm[i]) / (2.0 * h) - d[i]).abs() < 1e-6);
            }
            let scaled: Vec<f64> = dir_vals.iter().map(|v| alpha * v).collect();
            let mut ds = [0.0; 2];
            b.dderiv(&seg, &SegmentView::new(&scaled, 2, 0.25), &mut ds);
            for i in 0..2 {
                prop_assert!((ds[i] - alpha * d[i]).abs() < 1e-12);
            }
        }
    }
}
