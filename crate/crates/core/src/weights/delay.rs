use std::fmt;
use std::io::Write;
use std::sync::Arc;

use crate::drift::{SegmentDrift, SegmentView};
use crate::error::{Error, Result};
use crate::quad::{cumulative_integral, integrate_adaptive};
use crate::simulate::{delay_lags, DelayPath, NoisePath, Shift, SimGrid};
use crate::spectral::{norm, SigmaOperator, SpectralOperator};

type SegmentFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// Segment direction `η: [−τ, 0] → H_{A,n}` with its derivative.
#[derive(Clone)]
pub struct DelayDirection {
    dim: usize,
    eta: SegmentFn,
    eta_prime: SegmentFn,
}

impl fmt::Debug for DelayDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DelayDirection").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl DelayDirection {
    pub fn from_fns(dim: usize, eta: SegmentFn, eta_prime: SegmentFn) -> Self {
        Self { dim, eta, eta_prime }
    }

    /// `η(θ) = Σ_r v_r p_r(θ)` where `p_r` has coefficients `[c₀, c₁, …]` in
    /// increasing degree.
    pub fn polynomial(dim: usize, terms: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        for (v, c) in &terms {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            if v.iter().chain(c).any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter("eta terms must be finite".into()));
            }
        }
        let terms = Arc::new(terms);
        let t2 = terms.clone();
        let eta: SegmentFn = Arc::new(move |theta| {
            let mut out = vec![0.0; dim];
            for (v, c) in terms.iter() {
                let p = c.iter().rev().fold(0.0, |acc, a| acc * theta + a);
                for (o, x) in out.iter_mut().zip(v) {
                    *o += p * x;
                }
            }
            out
        });
        let eta_prime: SegmentFn = Arc::new(move |theta| {
            let mut out = vec![0.0; dim];
            for (v, c) in t2.iter() {
                let p = c
                    .iter()
                    .enumerate()
                    .skip(1)
                    .rev()
                    .fold(0.0, |acc, (k, a)| acc * theta + k as f64 * a);
                for (o, x) in out.iter_mut().zip(v) {
                    *o += p * x;
                }
            }
            out
        });
        Ok(Self { dim, eta, eta_prime })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eta(&self, theta: f64) -> Vec<f64> {
        (self.eta)(theta)
    }

    pub fn eta_prime(&self, theta: f64) -> Vec<f64> {
        (self.eta_prime)(theta)
    }

    /// `Aη(θ)`.
    pub fn a_eta(&self, op: &SpectralOperator, theta: f64) -> Vec<f64> {
        op.apply_a(&self.eta(theta)).expect("dimension checked")
    }

    /// `∫_{−τ}^0 (|Aη|² + |η'|²) dθ`.
    pub fn c1_norm(&self, op: &SpectralOperator, tau: f64) -> f64 {
        integrate_adaptive(
            |th| {
                let a = norm(&self.a_eta(op, th));
                let d = norm(&self.eta_prime(th));
                a * a + d * d
            },
            -tau,
            0.0,
            1e-12,
        )
    }

    fn check(&self, op: &SpectralOperator, horizon: f64, tau: f64) -> Result<()> {
        if self.dim != op.dim() {
            return Err(Error::DimensionMismatch {
                expected: op.dim(),
                got: self.dim,
            });
        }
        if horizon <= tau {
            return Err(Error::HorizonTooShort { horizon, tau });
        }
        if !self.c1_norm(op, tau).is_finite() {
            return Err(Error::InvalidParameter("eta has infinite C1 norm".into()));
        }
        Ok(())
    }
}

/// `Γ(t) = e^{(t+τ−T)A}η(−τ)/(T−τ)` for `t < T−τ` and `η'(t−T) − Aη(t−T)`
/// afterwards. `on_left` selects the first branch at `t = T−τ` itself.
fn gamma_value(dir: &DelayDirection, op: &SpectralOperator, horizon: f64, tau: f64, t: f64, on_left: bool) -> Vec<f64> {
    let cut = horizon - tau;
    if t < cut || (on_left && t == cut) {
        let start = dir.eta(-tau);
        op.exp_apply_signed(t - cut, &start).into_iter().map(|v| v / cut).collect()
    } else {
        let th = t - horizon;
        let a = dir.a_eta(op, th);
        dir.eta_prime(th).iter().zip(a).map(|(d, a)| d - a).collect()
    }
}

/// `D(t) = ∫_0^{t⁺} e^{(t−s)A}Γ(s) ds` in closed form.
fn perturbation_value(dir: &DelayDirection, op: &SpectralOperator, horizon: f64, tau: f64, t: f64) -> Vec<f64> {
    let cut = horizon - tau;
    if t <= 0.0 {
        vec![0.0; dir.dim]
    } else if t <= cut {
        let start = dir.eta(-tau);
        op.exp_apply_signed(t - cut, &start)
            .into_iter()
            .map(|v| v * t / cut)
            .collect()
    } else {
        dir.eta(t - horizon)
    }
}

/// Grid table of `Γ(t_j)`, `j = 0..=N`. Node `j` takes the branch of the cell
/// `[t_j, t_{j+1})` it starts, so the cell beginning at `T−τ` uses the second
/// branch.
pub fn delay_gamma(dir: &DelayDirection, op: &SpectralOperator, grid: &SimGrid, tau: f64) -> Result<Vec<f64>> {
    dir.check(op, grid.horizon(), tau)?;
    let lags = delay_lags(tau, grid.dt())?;
    let cut_index = grid.steps() - lags;
    let mut table = Vec::with_capacity((grid.steps() + 1) * dir.dim);
    for j in 0..=grid.steps() {
        let t = if j == cut_index { grid.horizon() - tau } else { grid.time(j) };
        table.extend(gamma_value(dir, op, grid.horizon(), tau, t, false));
    }
    Ok(table)
}

/// Grid table of `D(t_j)` for `j = −lags..=N`, stored from `t = −τ`.
pub fn delay_perturbation(dir: &DelayDirection, op: &SpectralOperator, grid: &SimGrid, tau: f64) -> Result<Vec<f64>> {
    dir.check(op, grid.horizon(), tau)?;
    let lags = delay_lags(tau, grid.dt())?;
    let mut table = Vec::with_capacity((grid.steps() + lags + 1) * dir.dim);
    for k in 0..=(grid.steps() + lags) {
        let t = if k <= lags { 0.0 } else { grid.time(k - lags) };
        table.extend(perturbation_value(dir, op, grid.horizon(), tau, t));
    }
    Ok(table)
}

/// Which segment the drift is differentiated along in the delay weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentChoice {
    /// The mild perturbation `D_t`, the direction the shifted solution moves in.
    Perturbation,
    /// The plain integral `Θ(t) = ∫_0^{t∨0} Γ(s) ds`.
    PlainIntegral,
}

/// `Γ`, `D` and the plain `Θ = ∫Γ` tabulated on a simulation grid.
#[derive(Debug, Clone)]
pub struct DelayIngredients {
    dir: DelayDirection,
    op: SpectralOperator,
    grid: SimGrid,
    tau: f64,
    lags: usize,
    gamma: Vec<f64>,
    perturbation: Vec<f64>,
    plain: Vec<f64>,
}

pub fn delay_ingredients(
    dir: &DelayDirection,
    op: &SpectralOperator,
    grid: &SimGrid,
    tau: f64,
) -> Result<DelayIngredients> {
    let gamma = delay_gamma(dir, op, grid, tau)?;
    let perturbation = delay_perturbation(dir, op, grid, tau)?;
    let lags = delay_lags(tau, grid.dt())?;
    let n = dir.dim;
    let times = grid.times();
    let cut = grid.horizon() - tau;
    let mut plain = vec![0.0; (grid.steps() + lags + 1) * n];
    for i in 0..n {
        let comp = cumulative_integral(&times, |s| {
            // the cut is a grid node, so interior quadrature nodes see one branch
            gamma_value(dir, op, grid.horizon(), tau, s, s <= cut)[i]
        });
        for (j, v) in comp.into_iter().enumerate() {
            plain[(j + lags) * n + i] = v;
        }
    }
    Ok(DelayIngredients {
        dir: dir.clone(),
        op: op.clone(),
        grid: *grid,
        tau,
        lags,
        gamma,
        perturbation,
        plain,
    })
}

impl DelayIngredients {
    pub fn grid(&self) -> &SimGrid {
        &self.grid
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn lags(&self) -> usize {
        self.lags
    }

    pub fn direction(&self) -> &DelayDirection {
        &self.dir
    }

    /// `Γ(t_j)`.
    pub fn gamma(&self, j: usize) -> &[f64] {
        let n = self.dir.dim;
        &self.gamma[j * n..(j + 1) * n]
    }

    /// `Γ(t)` off the grid (first branch on `[0, T−τ]`).
    pub fn gamma_at(&self, t: f64) -> Vec<f64> {
        gamma_value(&self.dir, &self.op, self.grid.horizon(), self.tau, t, true)
    }

    /// `D(t)` off the grid.
    pub fn perturbation_at(&self, t: f64) -> Vec<f64> {
        perturbation_value(&self.dir, &self.op, self.grid.horizon(), self.tau, t)
    }

    /// `D(t_j)` for `j ∈ 0..=N`.
    pub fn perturbation(&self, j: usize) -> &[f64] {
        let n = self.dir.dim;
        &self.perturbation[(j + self.lags) * n..(j + self.lags + 1) * n]
    }

    /// `Θ(t_j) = ∫_0^{t_j} Γ`.
    pub fn plain_integral(&self, j: usize) -> &[f64] {
        let n = self.dir.dim;
        &self.plain[(j + self.lags) * n..(j + self.lags + 1) * n]
    }

    /// Segment `θ ↦ D(t_j + θ)` (or `Θ(t_j + θ)`).
    pub fn segment(&self, j: usize, choice: SegmentChoice) -> SegmentView<'_> {
        let n = self.dir.dim;
        let table = match choice {
            SegmentChoice::Perturbation => &self.perturbation,
            SegmentChoice::PlainIntegral => &self.plain,
        };
        SegmentView::new(&table[j * n..(j + self.lags + 1) * n], n, self.grid.dt())
    }

    /// `max_j |Θ(t_j) − D(t_j)|`: how far the plain integral is from the
    /// actual perturbation.
    pub fn plain_discrepancy(&self) -> f64 {
        (0..=self.grid.steps())
            .map(|j| {
                let diff: Vec<f64> = self
                    .plain_integral(j)
                    .iter()
                    .zip(self.perturbation(j))
                    .map(|(a, b)| a - b)
                    .collect();
                norm(&diff)
            })
            .fold(0.0, f64::max)
    }

    /// Drift shift `ε Γ(t_j)`.
    pub fn shift(&self, eps: f64) -> Shift {
        let n = self.dir.dim;
        Shift::from_table(eps, n, self.gamma[..self.grid.steps() * n].to_vec())
    }

    /// CSV columns: `t, gamma_*, D_*, theta_*` over `[−τ, T]` (`Γ` is blank for `t < 0`).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let n = self.dir.dim;
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("gamma_{i}")));
        header.extend((1..=n).map(|i| format!("D_{i}")));
        header.extend((1..=n).map(|i| format!("theta_{i}")));
        out.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        let dt = self.grid.dt();
        for k in 0..=(self.grid.steps() + self.lags) {
            let t = (k as f64 - self.lags as f64) * dt;
            let mut rec = vec![t.to_string()];
            if k >= self.lags {
                rec.extend(self.gamma(k - self.lags).iter().map(f64::to_string));
            } else {
                rec.extend(std::iter::repeat_n(String::new(), n));
            }
            rec.extend(self.perturbation[k * n..(k + 1) * n].iter().map(f64::to_string));
            rec.extend(self.plain[k * n..(k + 1) * n].iter().map(f64::to_string));
            out.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `Σ_j ⟨σ^{-1}(Γ(t_j) − ∂_{D_{t_j}} b(X_{t_j})), ΔW_j⟩`.
pub fn delay_weight(
    path: &DelayPath,
    noise: &NoisePath,
    ing: &DelayIngredients,
    b: &dyn SegmentDrift,
    sig: &SigmaOperator,
) -> Result<f64> {
    delay_weight_along(path, noise, ing, b, sig, SegmentChoice::Perturbation)
}

/// The delay weight with an explicit choice of differentiation segment.
pub fn delay_weight_along(
    path: &DelayPath,
    noise: &NoisePath,
    ing: &DelayIngredients,
    b: &dyn SegmentDrift,
    sig: &SigmaOperator,
    choice: SegmentChoice,
) -> Result<f64> {
    let steps = path.steps();
    if noise.steps() != steps || ing.grid.steps() != steps || path.lags() != ing.lags {
        return Err(Error::InvalidParameter(format!(
            "path ({steps} steps, {} lags), noise ({}) and ingredients ({}, {} lags) disagree",
            path.lags(),
            noise.steps(),
            ing.grid.steps(),
            ing.lags
        )));
    }
    let n = path.dim();
    let inv = sig.inverse()?;
    let mut deriv = vec![0.0; n];
    let mut integrand = vec![0.0; n];
    let mut acc = 0.0;
    for j in 0..steps {
        b.dderiv(&path.segment(j), &ing.segment(j, choice), &mut deriv);
        for ((v, g), d) in integrand.iter_mut().zip(ing.gamma(j)).zip(&deriv) {
            *v = g - d;
        }
        acc += inv.inv_dot(&integrand, noise.increment(j));
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn affine(n: usize) -> DelayDirection {
        // η(θ) = (1 + θ) v
        let v: Vec<f64> = (0..n).map(|i| 1.0 / (i + 1) as f64).collect();
        DelayDirection::polynomial(n, vec![(v, vec![1.0, 1.0])]).unwrap()
    }

    #[test]
    fn polynomial_direction_and_derivative() {
        let d = DelayDirection::polynomial(1, vec![(vec![2.0], vec![1.0, -3.0, 0.5])]).unwrap();
        assert_relative_eq!(d.eta(-0.2)[0], 2.0 * (1.0 + 0.6 + 0.02), epsilon = 1e-15);
        assert_relative_eq!(d.eta_prime(-0.2)[0], 2.0 * (-3.0 - 0.2), epsilon = 1e-15);
    }

    #[test]
    fn gamma_endpoints() {
        let op = SpectralOperator::new(vec![1.0, 3.0]).unwrap();
        let grid = SimGrid::new(1.0, 20).unwrap();
        let dir = affine(2);
        let g = delay_gamma(&dir, &op, &grid, 0.5).unwrap();
        let start = op.exp_apply_signed(-0.5, &dir.eta(-0.5));
        for i in 0..2 {
            assert_relative_eq!(g[i], start[i] / 0.5, epsilon = 1e-14);
        }
        let end = &g[40..42];
        let expect: Vec<f64> = dir
            .eta_prime(0.0)
            .iter()
            .zip(dir.a_eta(&op, 0.0))
            .map(|(a, b)| a - b)
            .collect();
        assert_relative_eq!(end[0], expect[0], epsilon = 1e-14);
        assert_relative_eq!(end[1], expect[1], epsilon = 1e-14);
    }

    #[test]
    fn perturbation_is_continuous_and_ends_at_eta() {
        let op = SpectralOperator::new(vec![2.0]).unwrap();
        let grid = SimGrid::new(1.0, 10).unwrap();
        let ing = delay_ingredients(&affine(1), &op, &grid, 0.5).unwrap();
        let left = ing.perturbation_at(0.5 - 1e-12)[0];
        let right = ing.perturbation_at(0.5 + 1e-12)[0];
        assert_relative_eq!(left, right, epsilon = 1e-10);
        assert_relative_eq!(left, 0.5, epsilon = 1e-10);
        let seg = ing.segment(10, SegmentChoice::Perturbation);
        for k in 0..seg.nodes() {
            let th = -0.5 + k as f64 * 0.1;
            assert_relative_eq!(seg.node(k)[0], 1.0 + th, epsilon = 1e-12);
        }
        assert!(ing.perturbation(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn perturbation_matches_convolution_quadrature() {
        let op = SpectralOperator::new(vec![1.5]).unwrap();
        let grid = SimGrid::new(1.2, 12).unwrap();
        let ing = delay_ingredients(&affine(1), &op, &grid, 0.4).unwrap();
        for t in [0.3f64, 0.8, 0.95, 1.2] {
            let conv = integrate_adaptive(|s| (-1.5 * (t - s)).exp() * ing.gamma_at(s)[0], 0.0, t.min(0.8), 1e-13)
                + if t > 0.8 {
                    integrate_adaptive(
                        |s| (-1.5 * (t - s)).exp() * gamma_value(&ing.dir, &op, 1.2, 0.4, s, false)[0],
                        0.8,
                        t,
                        1e-13,
                    )
                } else {
                    0.0
                };
            assert_relative_eq!(conv, ing.perturbation_at(t)[0], epsilon = 1e-10);
        }
    }

    #[test]
    fn plain_integral_differs_from_perturbation() {
        let op = SpectralOperator::new(vec![2.0]).unwrap();
        let grid = SimGrid::new(1.0, 20).unwrap();
        let ing = delay_ingredients(&affine(1), &op, &grid, 0.5).unwrap();
        assert!(ing.plain_discrepancy() > 1e-3);
        // derivative of the plain integral is Γ
        let d = (ing.plain_integral(5)[0] - ing.plain_integral(4)[0]) / grid.dt();
        assert_relative_eq!(d, ing.gamma_at(0.225)[0], epsilon = 1e-3);
    }

    #[test]
    fn zero_eta_gives_zero_tables() {
        let op = SpectralOperator::new(vec![1.0]).unwrap();
        let grid = SimGrid::new(1.0, 10).unwrap();
        let dir = DelayDirection::polynomial(1, vec![]).unwrap();
        let ing = delay_ingredients(&dir, &op, &grid, 0.5).unwrap();
        assert!(ing.gamma.iter().chain(&ing.perturbation).all(|v| *v == 0.0));
    }

    #[test]
    fn short_horizon_and_misalignment_are_rejected() {
        let op = SpectralOperator::new(vec![1.0]).unwrap();
        let grid = SimGrid::new(0.5, 10).unwrap();
        assert!(matches!(
            delay_gamma(&affine(1), &op, &grid, 0.5),
            Err(Error::HorizonTooShort { .. })
        ));
        let grid = SimGrid::new(1.0, 10).unwrap();
        assert!(matches!(
            delay_perturbation(&affine(1), &op, &grid, 0.55),
            Err(Error::MisalignedDelay { .. })
        ));
    }
}
