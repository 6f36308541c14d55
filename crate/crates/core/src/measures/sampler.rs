use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::drift::{Drift, GibbsGradient, SegmentDrift, SegmentView};
use crate::error::{Error, Result};
use crate::harness::cylinder::CylinderFunction;
use crate::harness::reduce::{run_paths_chunked, Neumaier};
use crate::harness::rng::{rng_for_path, Domain};
use crate::simulate::{delay_lags, ExpEuler};
use crate::spectral::{mat_vec_add, SigmaOperator, SpectralOperator};

/// One of the three model classes with fixed coefficients.
#[derive(Debug, Clone)]
pub enum Dynamics {
    Semilinear {
        op: SpectralOperator,
        sig: SigmaOperator,
        drift: Arc<dyn Drift>,
    },
    /// State `(x, y)`; the drift reads the whole phase vector.
    Hamiltonian {
        coupling: DMatrix<f64>,
        op: SpectralOperator,
        sig: SigmaOperator,
        drift: Arc<dyn Drift>,
    },
    /// State is the flattened segment on `lags + 1` nodes.
    Delay {
        op: SpectralOperator,
        sig: SigmaOperator,
        drift: Arc<dyn SegmentDrift>,
        tau: f64,
    },
}

impl Dynamics {
    pub fn op(&self) -> &SpectralOperator {
        match self {
            Dynamics::Semilinear { op, .. } | Dynamics::Hamiltonian { op, .. } | Dynamics::Delay { op, .. } => op,
        }
    }

    /// Length of the state vector at step `dt`.
    pub fn state_dim(&self, dt: f64) -> Result<usize> {
        Ok(match self {
            Dynamics::Semilinear { op, .. } => op.dim(),
            Dynamics::Hamiltonian { coupling, op, .. } => coupling.nrows() + op.dim(),
            Dynamics::Delay { op, tau, .. } => (delay_lags(*tau, dt)? + 1) * op.dim(),
        })
    }

    /// Dissipativity constants `(c₁, c₂)` when the model has them.
    pub fn dissipativity(&self) -> Option<(f64, f64)> {
        match self {
            Dynamics::Semilinear { op, drift, .. } => drift.dissipativity().map(|c2| (op.lambda_min(), c2)),
            _ => None,
        }
    }

    /// Advance `state` by `steps` exponential-Euler steps with fresh noise.
    pub fn propagate(&self, state: &mut [f64], steps: usize, dt: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        let n = self.op().dim();
        let scheme = ExpEuler::new(self.op(), dt);
        let sd = dt.sqrt();
        let mut dw = vec![0.0; n];
        let mut forcing = vec![0.0; n];
        let draw = |dw: &mut [f64], rng: &mut ChaCha8Rng| {
            for v in dw.iter_mut() {
                *v = sd * rng.sample::<f64, _>(StandardNormal);
            }
        };
        match self {
            Dynamics::Semilinear { sig, drift, .. } => {
                for j in 0..steps {
                    drift.eval(state, &mut forcing);
                    scheme.step(state, &forcing);
                    draw(&mut dw, rng);
                    sig.apply_add(&dw, state);
                    finite(state, j)?;
                }
            }
            Dynamics::Hamiltonian {
                coupling, sig, drift, ..
            } => {
                let p = coupling.nrows();
                let mut dx = vec![0.0; p];
                for j in 0..steps {
                    drift.eval(state, &mut forcing);
                    dx.iter_mut().for_each(|v| *v = 0.0);
                    mat_vec_add(coupling, &state[p..], &mut dx);
                    let (x, y) = state.split_at_mut(p);
                    for (x, v) in x.iter_mut().zip(&dx) {
                        *x += dt * v;
                    }
                    scheme.step(y, &forcing);
                    draw(&mut dw, rng);
                    sig.apply_add(&dw, y);
                    finite(state, j)?;
                }
            }
            Dynamics::Delay { sig, drift, .. } => {
                let len = state.len();
                for j in 0..steps {
                    drift.eval(&SegmentView::new(state, n, dt), &mut forcing);
                    let mut x = state[len - n..].to_vec();
                    scheme.step(&mut x, &forcing);
                    draw(&mut dw, rng);
                    sig.apply_add(&dw, &mut x);
                    state.copy_within(n.., 0);
                    state[len - n..].copy_from_slice(&x);
                    finite(state, j)?;
                }
            }
        }
        Ok(())
    }

    /// `f(state)`; segment functions read the stored segment.
    pub fn evaluate(&self, f: &CylinderFunction, state: &[f64], dt: f64) -> f64 {
        match self {
            Dynamics::Delay { op, .. } => f.eval_segment(&SegmentView::new(state, op.dim(), dt)),
            _ => f.eval(state),
        }
    }
}

fn finite(x: &[f64], step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged { step })
    }
}

/// Long-run sampler of the invariant measure by independent chains.
#[derive(Debug, Clone)]
pub struct ErgodicSampler {
    pub dynamics: Dynamics,
    /// Starting state of every chain.
    pub initial: Vec<f64>,
    pub dt: f64,
    pub burn_in: f64,
    pub gap: f64,
    pub count: usize,
    pub chains: usize,
    pub seed: u64,
}

impl ErgodicSampler {
    /// Burn-in `10/(c₁+c₂)` when the dissipativity constants are known and
    /// positive, else `10/λ₁`; gap `1/λ₁`; 8 chains.
    pub fn new(dynamics: Dynamics, initial: Vec<f64>, dt: f64, count: usize, seed: u64) -> Self {
        let l1 = dynamics.op().lambda_min();
        let burn_in = match dynamics.dissipativity() {
            Some((c1, c2)) if c1 + c2 > 0.0 => 10.0 / (c1 + c2),
            _ => 10.0 / l1,
        };
        Self {
            dynamics,
            initial,
            dt,
            burn_in,
            gap: 1.0 / l1,
            count,
            chains: 8,
            seed,
        }
    }

    fn steps_for(&self, t: f64) -> usize {
        (t / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    /// `true` when the model's dissipativity margin is positive (or unknown).
    pub fn margin_ok(&self) -> bool {
        self.dynamics.dissipativity().is_none_or(|(c1, c2)| c1 + c2 > 0.0)
    }
}

/// `count` approximately stationary states, chain by chain.
pub fn sample_invariant(s: &ErgodicSampler, workers: usize) -> Result<Vec<Vec<f64>>> {
    let w = s.dynamics.state_dim(s.dt)?;
    if s.initial.len() != w {
        return Err(Error::DimensionMismatch {
            expected: w,
            got: s.initial.len(),
        });
    }
    if s.count == 0 {
        return Ok(Vec::new());
    }
    let chains = s.chains.clamp(1, s.count);
    let per_chain = s.count.div_ceil(chains);
    let burn = s.steps_for(s.burn_in);
    let gap = s.steps_for(s.gap).max(1);
    let reduced = run_paths_chunked(chains as u64, per_chain * w, workers, 1, |c, out| {
        let mut rng = rng_for_path(s.seed, c, Domain::Noise);
        let mut state = s.initial.clone();
        s.dynamics.propagate(&mut state, burn, s.dt, &mut rng)?;
        for _ in 0..per_chain {
            s.dynamics.propagate(&mut state, gap, s.dt, &mut rng)?;
            out.extend_from_slice(&state);
        }
        Ok(())
    })?;
    // interleaved, so a truncated set still draws on every chain
    let mut samples = Vec::with_capacity(s.count);
    'outer: for k in 0..per_chain {
        for c in 0..chains {
            if samples.len() == s.count {
                break 'outer;
            }
            samples.push(reduced.row(c)[k * w..(k + 1) * w].to_vec());
        }
    }
    Ok(samples)
}

/// Time-averaged covariance over `chains` chains of `steps` steps each,
/// after `burn_in` model time.
pub fn empirical_covariance(
    dynamics: &Dynamics,
    initial: &[f64],
    dt: f64,
    burn_in: f64,
    steps: usize,
    chains: usize,
    seed: u64,
    workers: usize,
) -> Result<DMatrix<f64>> {
    let w = dynamics.state_dim(dt)?;
    let width = w + w * w;
    let burn = (burn_in / dt).ceil() as usize;
    let reduced = run_paths_chunked(chains as u64, width, workers, 1, |c, out| {
        let mut rng = rng_for_path(seed, c, Domain::Noise);
        let mut state = initial.to_vec();
        dynamics.propagate(&mut state, burn, dt, &mut rng)?;
        let mut first = vec![Neumaier::default(); w];
        let mut second = vec![Neumaier::default(); w * w];
        for _ in 0..steps {
            dynamics.propagate(&mut state, 1, dt, &mut rng)?;
            for i in 0..w {
                first[i].add(state[i]);
                for j in 0..w {
                    second[i * w + j].add(state[i] * state[j]);
                }
            }
        }
        out.extend(first.iter().map(|s| s.value() / steps as f64));
        out.extend(second.iter().map(|s| s.value() / steps as f64));
        Ok(())
    })?;
    let mean: Vec<f64> = (0..w).map(|i| reduced.stats(i).mean).collect();
    Ok(DMatrix::from_fn(w, w, |i, j| reduced.stats(w + i * w + j).mean - mean[i] * mean[j]))
}

/// Exact sampler of `exp(−2V(x) + ⟨Ay, y⟩)` for the Gibbs drift
/// `V(x) = Σ a_i x_i²/2 + δ cos x_i`: rejection from `N(0, 1/(2a_i))` per
/// coordinate, acceptance `exp(−2δ cos x − 2|δ|)`.
#[derive(Debug, Clone)]
pub struct GibbsReference {
    a: Vec<f64>,
    delta: f64,
    lambdas: Vec<f64>,
}

impl GibbsReference {
    pub fn new(drift: &GibbsGradient, op: &SpectralOperator) -> Result<Self> {
        let (a, delta) = drift.coefficients();
        if a.iter().any(|v| *v <= 0.0) {
            return Err(Error::InvalidParameter("Gibbs reference needs a_i > 0".into()));
        }
        Ok(Self {
            a: a.to_vec(),
            delta,
            lambdas: op.eigenvalues().to_vec(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut z = Vec::with_capacity(2 * self.a.len());
        for a in &self.a {
            let sd = (0.5 / a).sqrt();
            loop {
                let x = sd * rng.sample::<f64, _>(StandardNormal);
                let u: f64 = rng.random();
                if u < (-2.0 * self.delta * x.cos() - 2.0 * self.delta.abs()).exp() {
                    z.push(x);
                    break;
                }
            }
        }
        for l in &self.lambdas {
            z.push((0.5 / l).sqrt() * rng.sample::<f64, _>(StandardNormal));
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{SineDrift, ZeroDrift};
    use crate::harness::reduce::ColumnStats;

    fn ou(sigma: f64) -> Dynamics {
        Dynamics::Semilinear {
            op: SpectralOperator::new(vec![1.0]).unwrap(),
            sig: SigmaOperator::noise_only(DMatrix::from_element(1, 1, sigma)).unwrap(),
            drift: Arc::new(ZeroDrift::new(1)),
        }
    }

    #[test]
    fn ou_stationary_variance() {
        let mut s = ErgodicSampler::new(ou(1.0), vec![0.0], 0.01, 20_000, 3);
        s.chains = 16;
        let samples = sample_invariant(&s, 1).unwrap();
        assert_eq!(samples.len(), 20_000);
        let st = ColumnStats::from_values(samples.iter().map(|x| x[0] * x[0]));
        // exp-Euler stationary variance (1 − e^{−2dt})^{-1} dt ≈ 0.5025
        let target = 0.01 / (1.0 - (-0.02f64).exp());
        assert!((st.mean - target).abs() < 3.0 * st.se(), "{} vs {target}", st.mean);
    }

    #[test]
    fn deterministic_decay_without_noise() {
        let s = ErgodicSampler::new(ou(0.0), vec![1.0], 0.01, 10, 1);
        for x in sample_invariant(&s, 1).unwrap() {
            assert!(x[0].abs() < 1e-4);
        }
    }

    #[test]
    fn two_seeds_agree() {
        let dynamics = Dynamics::Semilinear {
            op: SpectralOperator::power_law(2, 2.0).unwrap(),
            sig: SigmaOperator::identity(2),
            drift: Arc::new(SineDrift::new(2, 0.5)),
        };
        let a = ErgodicSampler::new(dynamics.clone(), vec![0.0; 2], 0.01, 8000, 1);
        let b = ErgodicSampler { seed: 2, ..a.clone() };
        let sa = ColumnStats::from_values(sample_invariant(&a, 1).unwrap().iter().map(|x| x[0] * x[0]));
        let sb = ColumnStats::from_values(sample_invariant(&b, 1).unwrap().iter().map(|x| x[0] * x[0]));
        let z = (sa.mean - sb.mean) / (sa.se().powi(2) + sb.se().powi(2)).sqrt();
        assert!(z.abs() < 3.0, "z = {z}");
    }

    #[test]
    fn worker_count_is_irrelevant() {
        let s = ErgodicSampler::new(ou(1.0), vec![0.0], 0.05, 64, 9);
        assert_eq!(sample_invariant(&s, 1).unwrap(), sample_invariant(&s, 4).unwrap());
    }

    #[test]
    fn delay_segments_shift_along() {
        let dynamics = Dynamics::Delay {
            op: SpectralOperator::new(vec![1.0]).unwrap(),
            sig: SigmaOperator::identity(1),
            drift: Arc::new(crate::drift::DelayTerminal::new(1, 0.5, 0.1).unwrap()),
            tau: 0.1,
        };
        let mut state = vec![0.0; 11];
        let mut rng = rng_for_path(1, 0, Domain::Noise);
        dynamics.propagate(&mut state, 3, 0.01, &mut rng).unwrap();
        assert!(state[..8].iter().all(|v| *v == 0.0));
        assert!(state[8..].iter().all(|v| *v != 0.0));
    }

    #[test]
    fn gibbs_reference_second_moment() {
        use rand::SeedableRng;
        let op = SpectralOperator::new(vec![1.0]).unwrap();
        let g = GibbsGradient::new(vec![1.0], 0.5, &op).unwrap();
        let r = GibbsReference::new(&g, &op).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..40_000).map(|_| r.sample(&mut rng)[0]).collect();
        let st = ColumnStats::from_values(xs.iter().map(|x| x * x));
        // E x² under exp(−x² − cos x), by quadrature
        let w = |x: f64| (-x * x - x.cos()).exp();
        let num = crate::quad::integrate_adaptive(|x| x * x * w(x), -10.0, 10.0, 1e-12);
        let den = crate::quad::integrate_adaptive(w, -10.0, 10.0, 1e-12);
        assert!((st.mean - num / den).abs() < 3.0 * st.se());
    }
}
