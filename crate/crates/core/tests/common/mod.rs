#![allow(dead_code)]

use std::path::PathBuf;

use ibplab::drift::SegmentView;
use ibplab::harness::config::{ExperimentConfig, Model};
use ibplab::harness::experiment::hamiltonian_ingredients;
use ibplab::simulate::{
    constant_segment, delay_lags, simulate_delay, simulate_hamiltonian, HamiltonianSystem, NoisePath, SimGrid,
};
use ibplab::weights::{check_ph_constraints, default_phi_psi, delay_ingredients, ham_h_theta, HamDirection};
use ibplab::SpectralOperator;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEED: u64 = 20261015;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&config_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn sup(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |m, x| m.max(x.abs()))
}

/// Worst `(φ, ψ)` residual and worst endpoint error of `Θ`, `h̃` over
/// `draws` random `(T, θ₁, θ₂)`.
pub fn ph_sweep(draws: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_ph, mut worst_end) = (0.0f64, 0.0f64);
    for _ in 0..draws {
        let t = rng.random_range(0.1..5.0);
        let th1: f64 = -rng.random_range(0.05..6.0);
        let th2: f64 = -rng.random_range(0.05..6.0);
        let pp = default_phi_psi(t, th1, th2).unwrap();
        worst_ph = worst_ph.max(sup(check_ph_constraints(&pp).into_iter()));
        // A has eigenvalues θ₁, θ₂ on the axes carrying k₁, k₂; B = I
        let (e1, e2) = (vec![1.0, 0.0], vec![0.0, 1.0]);
        let (op, k1, k2) = if th1 >= th2 {
            (SpectralOperator::new(vec![-th1, -th2]).unwrap(), e1, e2)
        } else {
            (SpectralOperator::new(vec![-th2, -th1]).unwrap(), e2, e1)
        };
        let dir = HamDirection::new(k1.clone(), k2.clone(), &DMatrix::identity(2, 2), &op).unwrap();
        let grid = SimGrid::new(t, 256).unwrap();
        let ing = ham_h_theta(&pp, &dir, &grid).unwrap();
        let start = sup(ing.theta(0).iter().copied());
        let end_k: Vec<f64> = k1.iter().chain(&k2).copied().collect();
        let end = sup(ing.theta(grid.steps()).iter().zip(&end_k).map(|(a, b)| a - b));
        let htilde = sup(ing.htilde_at(t).iter().zip(&k2).map(|(a, b)| a - b));
        worst_end = worst_end.max(start).max(end).max(htilde);
    }
    (worst_ph, worst_end)
}

/// `max_j |Y^ε_j − Y_j − εh̃(t_j)| / (ε dt)` and
/// `|Z^ε(T) − Z(T) − εk| / (ε dt)` for the shifted Hamiltonian system.
pub fn hamiltonian_shift_constants(cfg: &ExperimentConfig, eps: f64, steps: usize) -> (f64, f64) {
    let mut cfg = cfg.clone();
    cfg.steps = steps;
    let setup = cfg.build().unwrap();
    let Model::Hamiltonian {
        coupling,
        drift,
        direction,
        x0,
        y0,
        ..
    } = &setup.model
    else {
        panic!("not a Hamiltonian config")
    };
    let dir = direction.as_ref().unwrap();
    let sys = HamiltonianSystem {
        coupling,
        op: &setup.op,
        sig: &setup.sig,
        drift: drift.as_ref(),
    };
    let grid = setup.grid;
    let ing = hamiltonian_ingredients(dir, &grid).unwrap();
    let noise = NoisePath::generate(SEED, 0, setup.op.dim(), &grid);
    let base = simulate_hamiltonian(x0, y0, &sys, &grid, &noise, None).unwrap();
    let shifted = simulate_hamiltonian(x0, y0, &sys, &grid, &noise, Some((&ing.shift(eps), &base))).unwrap();
    let scale = eps * grid.dt();
    let nodewise = (0..=grid.steps())
        .map(|j| {
            let h = ing.htilde_at(grid.time(j));
            sup(shifted
                .velocity(j)
                .iter()
                .zip(base.velocity(j))
                .zip(&h)
                .map(|((a, b), h)| a - b - eps * h))
        })
        .fold(0.0, f64::max);
    let k = dir.stacked();
    let terminal = shifted
        .terminal()
        .iter()
        .zip(base.terminal())
        .zip(&k)
        .map(|((a, b), k)| (a - b - eps * k).powi(2))
        .sum::<f64>()
        .sqrt();
    (nodewise / scale, terminal / scale)
}

/// `‖X_T^ε − X_T − εη‖_∞ / (ε dt)` over the terminal segment.
pub fn delay_shift_constant(cfg: &ExperimentConfig, eps: f64, steps: usize) -> f64 {
    let mut cfg = cfg.clone();
    cfg.steps = steps;
    let setup = cfg.build().unwrap();
    let Model::Delay {
        drift,
        direction,
        tau,
        x0,
    } = &setup.model
    else {
        panic!("not a delay config")
    };
    let dir = direction.as_ref().unwrap();
    let (op, sig, grid) = (&setup.op, &setup.sig, setup.grid);
    let n = op.dim();
    let ing = delay_ingredients(dir, op, &grid, *tau).unwrap();
    let lags = delay_lags(*tau, grid.dt()).unwrap();
    let init = constant_segment(x0, lags);
    let xi0 = SegmentView::new(&init, n, grid.dt());
    let noise = NoisePath::generate(SEED, 0, n, &grid);
    let base = simulate_delay(&xi0, op, sig, drift.as_ref(), &grid, *tau, &noise, None).unwrap();
    let shift = ing.shift(eps);
    let shifted = simulate_delay(&xi0, op, sig, drift.as_ref(), &grid, *tau, &noise, Some((&shift, &base))).unwrap();
    let (a, b) = (shifted.terminal_segment(), base.terminal_segment());
    let worst = (0..a.nodes())
        .map(|i| {
            let theta = -tau + i as f64 * grid.dt();
            let eta = dir.eta(theta);
            sup(a.node(i).iter().zip(b.node(i)).zip(&eta).map(|((x, y), e)| x - y - eps * e))
        })
        .fold(0.0, f64::max);
    worst / (eps * grid.dt())
}
