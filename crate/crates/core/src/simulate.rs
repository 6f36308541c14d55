//! Exponential-Euler path simulation for the three model classes.
//!
//! The linear part is integrated exactly per mode; the noise enters as the
//! raw increment `σ ΔW_j`, which is stored with the path so the weights can
//! be built from the very same increments. Shifted runs (`ε s(t)` added to
//! the drift) evaluate the nonlinear drift on a supplied base path, which
//! makes `X^ε − X` a deterministic function of the shift.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::drift::{Drift, SegmentDrift, SegmentView};
use crate::error::{Error, Result};
use crate::harness::rng::{rng_for_path, Domain};
use crate::spectral::{mat_vec_add, SigmaOperator, SpectralOperator};

/// Uniform time grid on `[0, T]`; `dt` is always derived from `T / steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimGrid {
    horizon: f64,
    steps: usize,
}

impl SimGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("steps must be positive".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.horizon
        } else {
            j as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.time(j)).collect()
    }

    /// The same horizon with twice as many steps.
    pub fn refined(&self) -> Self {
        Self {
            horizon: self.horizon,
            steps: 2 * self.steps,
        }
    }
}

/// Brownian increments `ΔW_j ~ N(0, dt I)` for one path.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    dim: usize,
    dt: f64,
    increments: Vec<f64>,
    seed: u64,
    path_index: u64,
}

impl NoisePath {
    /// Increments drawn from the noise stream of `(seed, path_index)`.
    pub fn generate(seed: u64, path_index: u64, dim: usize, grid: &SimGrid) -> Self {
        let mut rng = rng_for_path(seed, path_index, Domain::Noise);
        let root = grid.dt().sqrt();
        let increments = (0..grid.steps() * dim)
            .map(|_| root * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            dim,
            dt: grid.dt(),
            increments,
            seed,
            path_index,
        }
    }

    pub fn from_increments(dim: usize, dt: f64, increments: Vec<f64>) -> Result<Self> {
        if dim == 0 || !increments.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: increments.len(),
            });
        }
        Ok(Self {
            dim,
            dt,
            increments,
            seed: 0,
            path_index: 0,
        })
    }

    /// Brownian-bridge refinement to `dt/2`: each increment is split into two
    /// halves summing to it exactly, with the midpoint drawn from the
    /// auxiliary stream of the same path.
    pub fn refine(&self) -> Self {
        let mut rng = rng_for_path(self.seed, self.path_index, Domain::Auxiliary);
        let half_sd = 0.5 * self.dt.sqrt();
        let mut fine = Vec::with_capacity(2 * self.increments.len());
        let mut first = vec![0.0; self.dim];
        for step in self.increments.chunks_exact(self.dim) {
            for (a, dw) in first.iter_mut().zip(step) {
                *a = 0.5 * dw + half_sd * rng.sample::<f64, _>(StandardNormal);
            }
            fine.extend_from_slice(&first);
            fine.extend(step.iter().zip(&first).map(|(dw, a)| dw - a));
        }
        Self {
            dim: self.dim,
            dt: 0.5 * self.dt,
            increments: fine,
            seed: self.seed,
            path_index: self.path_index,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.increments.len() / self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    pub fn increment(&self, j: usize) -> &[f64] {
        &self.increments[j * self.dim..(j + 1) * self.dim]
    }

    pub fn stream_key(&self) -> (u64, u64) {
        (self.seed, self.path_index)
    }

    /// `W(T)`.
    pub fn terminal(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.dim];
        for step in self.increments.chunks_exact(self.dim) {
            for (w, dw) in w.iter_mut().zip(step) {
                *w += dw;
            }
        }
        w
    }
}

/// Deterministic drift shift `ε s(t_j)` tabulated on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Shift {
    eps: f64,
    dim: usize,
    table: Vec<f64>,
}

impl Shift {
    pub fn from_fn<F: FnMut(f64) -> Vec<f64>>(eps: f64, grid: &SimGrid, dim: usize, mut s: F) -> Result<Self> {
        let mut table = Vec::with_capacity(grid.steps() * dim);
        for j in 0..grid.steps() {
            let v = s(grid.time(j));
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            table.extend(v);
        }
        Ok(Self { eps, dim, table })
    }

    /// Shift from a row-major table with one row per grid step.
    pub fn from_table(eps: f64, dim: usize, table: Vec<f64>) -> Self {
        debug_assert!(dim > 0 && table.len().is_multiple_of(dim));
        Self { eps, dim, table }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn at(&self, j: usize) -> &[f64] {
        &self.table[j * self.dim..(j + 1) * self.dim]
    }
}

/// Per-mode exponential-Euler coefficients: `e^{-λ dt}` and
/// `(1 − e^{-λ dt})/λ = A^{-1}(e^{A dt} − I)`.
#[derive(Debug, Clone)]
pub struct ExpEuler {
    decay: Vec<f64>,
    gain: Vec<f64>,
}

impl ExpEuler {
    pub fn new(op: &SpectralOperator, dt: f64) -> Self {
        let decay: Vec<f64> = op.eigenvalues().iter().map(|l| (-l * dt).exp()).collect();
        let gain = op
            .eigenvalues()
            .iter()
            .map(|l| -(-l * dt).exp_m1() / l)
            .collect();
        Self { decay, gain }
    }

    /// `x ← e^{A dt} x + A^{-1}(e^{A dt} − I) forcing`.
    #[inline]
    pub fn step(&self, x: &mut [f64], forcing: &[f64]) {
        for (((x, d), g), f) in x.iter_mut().zip(&self.decay).zip(&self.gain).zip(forcing) {
            *x = d * *x + g * f;
        }
    }
}

fn check(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

fn check_finite(x: &[f64], step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged { step })
    }
}

/// Trajectory `X_0..X_N` of the semilinear equation.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    dim: usize,
    dt: f64,
    states: Vec<f64>,
    shift_eps: Option<f64>,
}

impl PathSample {
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn steps(&self) -> usize {
        self.states.len() / self.dim - 1
    }
    #[inline]
    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }
    pub fn terminal(&self) -> &[f64] {
        self.state(self.steps())
    }
    pub fn shift_eps(&self) -> Option<f64> {
        self.shift_eps
    }

    /// CSV dump with columns `t, X_1..X_n`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_states_csv(w, "X", self.dim, self.dt, 0, &self.states)
    }
}

pub(crate) fn write_states_csv<W: Write>(
    w: W,
    prefix: &str,
    dim: usize,
    dt: f64,
    offset: usize,
    states: &[f64],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=dim).map(|i| format!("{prefix}_{i}")));
    out.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for (j, row) in states.chunks_exact(dim).enumerate() {
        let t = (j as f64 - offset as f64) * dt;
        let mut rec = vec![format!("{t}")];
        rec.extend(row.iter().map(|v| format!("{v}")));
        out.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// `dX = (AX + b(X) + ε s(t)) dt + σ dW`.
pub fn simulate_semilinear(
    x0: &[f64],
    op: &SpectralOperator,
    sig: &SigmaOperator,
    b: &dyn Drift,
    grid: &SimGrid,
    noise: &NoisePath,
    shift: Option<&Shift>,
) -> Result<PathSample> {
    let n = op.dim();
    check(n, x0.len())?;
    check(n, sig.dim())?;
    check(n, b.in_dim())?;
    check(n, b.out_dim())?;
    check(n, noise.dim())?;
    check(grid.steps(), noise.steps())?;
    let scheme = ExpEuler::new(op, grid.dt());
    let shift = shift.filter(|s| s.eps() != 0.0);
    let mut states = Vec::with_capacity((grid.steps() + 1) * n);
    states.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut forcing = vec![0.0; n];
    let free = b.is_zero();
    for j in 0..grid.steps() {
        if !free {
            b.eval(&x, &mut forcing);
        }
        if let Some(s) = shift {
            if free {
                forcing.iter_mut().for_each(|f| *f = 0.0);
            }
            for (f, v) in forcing.iter_mut().zip(s.at(j)) {
                *f += s.eps() * v;
            }
        }
        scheme.step(&mut x, &forcing);
        sig.apply_add(noise.increment(j), &mut x);
        check_finite(&x, j)?;
        states.extend(x.iter().copied());
    }
    Ok(PathSample {
        dim: n,
        dt: grid.dt(),
        states,
        shift_eps: shift.map(Shift::eps),
    })
}

/// Trajectory `Z_j = (X_j, Y_j)` of the stochastic Hamiltonian system,
/// stored contiguously so drifts on `H̃ × H` read `Z_j` directly.
#[derive(Debug, Clone, PartialEq)]
pub struct HamPath {
    pos_dim: usize,
    vel_dim: usize,
    dt: f64,
    states: Vec<f64>,
}

impl HamPath {
    pub fn pos_dim(&self) -> usize {
        self.pos_dim
    }
    pub fn vel_dim(&self) -> usize {
        self.vel_dim
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn steps(&self) -> usize {
        self.states.len() / (self.pos_dim + self.vel_dim) - 1
    }
    pub fn state(&self, j: usize) -> &[f64] {
        let w = self.pos_dim + self.vel_dim;
        &self.states[j * w..(j + 1) * w]
    }
    pub fn position(&self, j: usize) -> &[f64] {
        &self.state(j)[..self.pos_dim]
    }
    pub fn velocity(&self, j: usize) -> &[f64] {
        &self.state(j)[self.pos_dim..]
    }
    pub fn terminal(&self) -> &[f64] {
        self.state(self.steps())
    }
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_states_csv(w, "Z", self.pos_dim + self.vel_dim, self.dt, 0, &self.states)
    }
}

/// Coefficients of the Hamiltonian system shared by plain and shifted runs.
#[derive(Debug, Clone, Copy)]
pub struct HamiltonianSystem<'a> {
    pub coupling: &'a DMatrix<f64>,
    pub op: &'a SpectralOperator,
    pub sig: &'a SigmaOperator,
    pub drift: &'a dyn Drift,
}

impl HamiltonianSystem<'_> {
    fn validate(&self) -> Result<(usize, usize)> {
        let d = self.op.dim();
        check(d, self.coupling.ncols())?;
        let p = self.coupling.nrows();
        check(d, self.sig.dim())?;
        check(p + d, self.drift.in_dim())?;
        check(d, self.drift.out_dim())?;
        Ok((p, d))
    }
}

/// `dX = B Y dt`, `dY = (AY + b(Z) + ε h'(t)) dt + σ dW`; with a shift the
/// drift reads the base path `Z_j^{base}` instead of the current state.
pub fn simulate_hamiltonian(
    x0: &[f64],
    y0: &[f64],
    sys: &HamiltonianSystem<'_>,
    grid: &SimGrid,
    noise: &NoisePath,
    shift: Option<(&Shift, &HamPath)>,
) -> Result<HamPath> {
    let (p, d) = sys.validate()?;
    check(p, x0.len())?;
    check(d, y0.len())?;
    check(d, noise.dim())?;
    check(grid.steps(), noise.steps())?;
    if let Some((_, base)) = shift {
        check(grid.steps(), base.steps())?;
        check(p, base.pos_dim)?;
    }
    let dt = grid.dt();
    let scheme = ExpEuler::new(sys.op, dt);
    let mut states = Vec::with_capacity((grid.steps() + 1) * (p + d));
    let mut z: Vec<f64> = x0.iter().chain(y0).copied().collect();
    states.extend_from_slice(&z);
    let mut forcing = vec![0.0; d];
    let mut dx = vec![0.0; p];
    for j in 0..grid.steps() {
        match shift {
            Some((s, base)) => {
                sys.drift.eval(base.state(j), &mut forcing);
                for (f, v) in forcing.iter_mut().zip(s.at(j)) {
                    *f += s.eps() * v;
                }
            }
            None => sys.drift.eval(&z, &mut forcing),
        }
        dx.iter_mut().for_each(|v| *v = 0.0);
        mat_vec_add(sys.coupling, &z[p..], &mut dx);
        let (x, y) = z.split_at_mut(p);
        for (x, v) in x.iter_mut().zip(&dx) {
            *x += dt * v;
        }
        scheme.step(y, &forcing);
        sys.sig.apply_add(noise.increment(j), y);
        check_finite(&z, j)?;
        states.extend_from_slice(&z);
    }
    Ok(HamPath {
        pos_dim: p,
        vel_dim: d,
        dt,
        states,
    })
}

/// Solution of the delay equation on the grid over `[−τ, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayPath {
    dim: usize,
    dt: f64,
    lags: usize,
    values: Vec<f64>,
}

impl DelayPath {
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    /// Number of grid steps spanned by the delay, `τ = lags · dt`.
    pub fn lags(&self) -> usize {
        self.lags
    }
    pub fn tau(&self) -> f64 {
        self.lags as f64 * self.dt
    }
    pub fn steps(&self) -> usize {
        self.values.len() / self.dim - 1 - self.lags
    }
    /// `X(t_j)` for `j ≥ −lags` (given as `j + lags`).
    pub fn node(&self, storage_index: usize) -> &[f64] {
        &self.values[storage_index * self.dim..(storage_index + 1) * self.dim]
    }
    /// `X(t_j)`, `j ∈ 0..=N`.
    pub fn state(&self, j: usize) -> &[f64] {
        self.node(j + self.lags)
    }
    /// The segment `X_{t_j}(θ) = X(t_j + θ)`, `θ ∈ [−τ, 0]`.
    pub fn segment(&self, j: usize) -> SegmentView<'_> {
        SegmentView::new(
            &self.values[j * self.dim..(j + self.lags + 1) * self.dim],
            self.dim,
            self.dt,
        )
    }
    pub fn terminal_segment(&self) -> SegmentView<'_> {
        self.segment(self.steps())
    }
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_states_csv(w, "X", self.dim, self.dt, self.lags, &self.values)
    }
}

/// Number of grid steps in `τ`, or an error when `τ` is not a multiple of `dt`.
pub fn delay_lags(tau: f64, dt: f64) -> Result<usize> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("delay tau must be positive, got {tau}")));
    }
    let m = (tau / dt).round();
    if m < 1.0 || (m * dt - tau).abs() > 1e-9 * tau.max(dt) {
        return Err(Error::MisalignedDelay { tau, dt });
    }
    Ok(m as usize)
}

/// `dX = (AX + b(X_t) + ε Γ(t)) dt + σ dW`, `X_0 = ξ`. With a shift the
/// drift reads the base path's segment.
#[allow(clippy::too_many_arguments)]
pub fn simulate_delay(
    xi0: &SegmentView<'_>,
    op: &SpectralOperator,
    sig: &SigmaOperator,
    b: &dyn SegmentDrift,
    grid: &SimGrid,
    tau: f64,
    noise: &NoisePath,
    shift: Option<(&Shift, &DelayPath)>,
) -> Result<DelayPath> {
    let n = op.dim();
    let dt = grid.dt();
    let lags = delay_lags(tau, dt)?;
    check(n, xi0.dim())?;
    check(n, sig.dim())?;
    check(n, b.dim())?;
    check(n, noise.dim())?;
    check(grid.steps(), noise.steps())?;
    check(lags + 1, xi0.nodes())?;
    if b.tau() > tau * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "drift lag {} exceeds the segment length {tau}",
            b.tau()
        )));
    }
    if let Some((_, base)) = shift {
        check(grid.steps(), base.steps())?;
        check(lags, base.lags)?;
    }
    let scheme = ExpEuler::new(op, dt);
    let shift = shift.filter(|(s, _)| s.eps() != 0.0);
    let mut values = Vec::with_capacity((lags + 1 + grid.steps()) * n);
    values.extend_from_slice(xi0.raw());
    let mut forcing = vec![0.0; n];
    for j in 0..grid.steps() {
        match shift {
            Some((s, base)) => {
                b.eval(&base.segment(j), &mut forcing);
                for (f, v) in forcing.iter_mut().zip(s.at(j)) {
                    *f += s.eps() * v;
                }
            }
            None => {
                let seg = SegmentView::new(&values[j * n..(j + lags + 1) * n], n, dt);
                b.eval(&seg, &mut forcing);
            }
        }
        let mut x = values[(j + lags) * n..(j + lags + 1) * n].to_vec();
        scheme.step(&mut x, &forcing);
        sig.apply_add(noise.increment(j), &mut x);
        check_finite(&x, j)?;
        values.extend_from_slice(&x);
    }
    Ok(DelayPath {
        dim: n,
        dt,
        lags,
        values,
    })
}

/// Constant initial segment `ξ(θ) = x` on a grid with `lags + 1` nodes.
pub fn constant_segment(x: &[f64], lags: usize) -> Vec<f64> {
    x.iter().copied().cycle().take(x.len() * (lags + 1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{DelayTerminal, SineDrift, ZeroDrift};
    use approx::assert_relative_eq;

    fn zero_sigma(n: usize) -> SigmaOperator {
        SigmaOperator::noise_only(DMatrix::zeros(n, n)).unwrap()
    }

    #[test]
    fn grid_invariants() {
        let g = SimGrid::new(1.5, 7).unwrap();
        assert_eq!(g.dt() * 7.0, 1.5);
        assert_eq!(g.time(7), 1.5);
        assert!(SimGrid::new(0.0, 3).is_err());
        assert!(SimGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn deterministic_decay() {
        let op = SpectralOperator::new(vec![1.0]).unwrap();
        let grid = SimGrid::new(1.0, 1024).unwrap();
        let noise = NoisePath::generate(1, 0, 1, &grid);
        let p = simulate_semilinear(&[1.0], &op, &zero_sigma(1), &ZeroDrift::new(1), &grid, &noise, None).unwrap();
        assert_relative_eq!(p.terminal()[0], (-1f64).exp(), epsilon = 1e-14);
        assert_eq!(p.state(0), &[1.0]);
    }

    #[test]
    fn constant_shift_matches_variation_of_constants() {
        let lam = 2.0;
        let op = SpectralOperator::new(vec![lam]).unwrap();
        let eps = 0.3;
        let t = 1.0;
        let exact = eps * (1.0 - (-lam * t).exp()) / lam;
        let mut errs = vec![];
        for steps in [64, 128, 256] {
            let grid = SimGrid::new(t, steps).unwrap();
            let noise = NoisePath::generate(1, 0, 1, &grid);
            let base = simulate_semilinear(&[0.5], &op, &zero_sigma(1), &ZeroDrift::new(1), &grid, &noise, None).unwrap();
            let s = Shift::from_fn(eps, &grid, 1, |_| vec![1.0]).unwrap();
            let sh = simulate_semilinear(&[0.5], &op, &zero_sigma(1), &ZeroDrift::new(1), &grid, &noise, Some(&s)).unwrap();
            errs.push((sh.terminal()[0] - base.terminal()[0] - exact).abs());
        }
        // piecewise-constant forcing is integrated exactly
        for e in errs {
            assert!(e < 1e-14);
        }
    }

    #[test]
    fn zero_eps_shift_is_bitwise_identical() {
        let op = SpectralOperator::power_law(3, 2.0).unwrap();
        let sig = SigmaOperator::diagonal(vec![1.0, 0.5, 0.3]).unwrap();
        let b = SineDrift::new(3, 0.5);
        let grid = SimGrid::new(1.0, 128).unwrap();
        let noise = NoisePath::generate(9, 4, 3, &grid);
        let s = Shift::from_fn(0.0, &grid, 3, |t| vec![t, 1.0, -t]).unwrap();
        let x0 = [0.1, -0.2, 0.3];
        let a = simulate_semilinear(&x0, &op, &sig, &b, &grid, &noise, None).unwrap();
        let c = simulate_semilinear(&x0, &op, &sig, &b, &grid, &noise, Some(&s)).unwrap();
        assert_eq!(a.states, c.states);
        let again = simulate_semilinear(&x0, &op, &sig, &b, &grid, &NoisePath::generate(9, 4, 3, &grid), None).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let op = SpectralOperator::new(vec![1.0]).unwrap();
        let grid = SimGrid::new(1.0, 4).unwrap();
        let noise = NoisePath::from_increments(1, 0.25, vec![0.0, f64::INFINITY, 0.0, 0.0]).unwrap();
        let r = simulate_semilinear(&[0.0], &op, &SigmaOperator::identity(1), &ZeroDrift::new(1), &grid, &noise, None);
        assert_eq!(r, Err(Error::Diverged { step: 1 }));
    }

    #[test]
    fn refinement_preserves_coarse_increments() {
        let grid = SimGrid::new(1.0, 16).unwrap();
        let coarse = NoisePath::generate(3, 11, 2, &grid);
        let fine = coarse.refine();
        assert_eq!(fine.steps(), 32);
        for j in 0..16 {
            for i in 0..2 {
                let sum = fine.increment(2 * j)[i] + fine.increment(2 * j + 1)[i];
                assert!((sum - coarse.increment(j)[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn first_increment_statistics() {
        // CLT: mean and variance of the first increment over 10^4 paths.
        let grid = SimGrid::new(1.0, 64).unwrap();
        let dt = grid.dt();
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|i| NoisePath::generate(2024, i, 1, &grid).increment(0)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!(mean.abs() <= 4.0 * (dt / n as f64).sqrt());
        // Var of the sample variance of a Gaussian is 2 σ⁴ / (n-1).
        assert!((var - dt).abs() <= 4.0 * dt * (2.0 / (n as f64 - 1.0)).sqrt());
        let fine: Vec<f64> = (0..n)
            .map(|i| NoisePath::generate(2024, i, 1, &grid).refine().increment(0)[0])
            .collect();
        let fvar = fine.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!((fvar - dt / 2.0).abs() <= 4.0 * dt / 2.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn hamiltonian_without_velocity_is_frozen() {
        let op = SpectralOperator::new(vec![1.0, 3.0]).unwrap();
        let sig = zero_sigma(2);
        let b = crate::drift::PhaseLift::new(
            std::sync::Arc::new(ZeroDrift::new(2)),
            crate::drift::PhaseBlock::Position,
            2,
            2,
        )
        .unwrap();
        let bm = DMatrix::identity(2, 2);
        let sys = HamiltonianSystem { coupling: &bm, op: &op, sig: &sig, drift: &b };
        let grid = SimGrid::new(1.0, 32).unwrap();
        let noise = NoisePath::generate(0, 0, 2, &grid);
        let p = simulate_hamiltonian(&[0.7, -1.2], &[0.0, 0.0], &sys, &grid, &noise, None).unwrap();
        for j in 0..=32 {
            assert_eq!(p.position(j), &[0.7, -1.2]);
        }
    }

    #[test]
    fn delay_pure_decay_and_history() {
        let op = SpectralOperator::new(vec![1.0, 2.0]).unwrap();
        let grid = SimGrid::new(1.0, 256).unwrap();
        let lags = delay_lags(0.25, grid.dt()).unwrap();
        assert_eq!(lags, 64);
        let x = [1.0, -0.5];
        let xi = constant_segment(&x, lags);
        let b = DelayTerminal::new(2, 0.0, 0.25).unwrap();
        let noise = NoisePath::generate(0, 0, 2, &grid);
        let p = simulate_delay(&SegmentView::new(&xi, 2, grid.dt()), &op, &zero_sigma(2), &b, &grid, 0.25, &noise, None)
            .unwrap();
        for k in 0..=lags {
            assert_eq!(p.node(k), &x);
        }
        let expect = op.semigroup_apply(1.0, &x).unwrap();
        for (got, want) in p.state(256).iter().zip(&expect) {
            assert_relative_eq!(got, want, epsilon = 1e-14);
        }
        assert_eq!(p.terminal_segment().nodes(), lags + 1);
    }

    #[test]
    fn delay_rejects_bad_lags() {
        assert!(matches!(delay_lags(0.3, 1.0 / 256.0), Err(Error::MisalignedDelay { .. })));
        assert!(delay_lags(0.0, 0.1).is_err());
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let op = SpectralOperator::new(vec![1.0, 2.0]).unwrap();
        let grid = SimGrid::new(1.0, 4).unwrap();
        let noise = NoisePath::generate(0, 0, 2, &grid);
        let p = simulate_semilinear(&[1.0, 1.0], &op, &SigmaOperator::identity(2), &ZeroDrift::new(2), &grid, &noise, None)
            .unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,X_1,X_2");
        assert_eq!(lines.len(), 6);
        assert!(lines[1].starts_with("0,1,1"));
    }
}
