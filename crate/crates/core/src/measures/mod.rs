//! Invariant measures: long-run samplers, closed-form references decided by
//! independent oracles, stationarity and Fomin-type derivative checks.

mod checks;
mod fokker_planck;
mod gaussian;
mod sampler;

pub use checks::{
    alpha, closability_chain_check, contraction_check, fomin_check, fomin_constant, fomin_constant_rederived,
    form_energy, stationarity_check, ContractionReport, ContractionViolation, FominReport, PairedEstimate,
};
pub use fokker_planck::{
    fp_residual, fp_residual_at, phase_grid, FpResidual, GradientLogDensity, LogDensity, QuadraticLogDensity,
};
pub use gaussian::{
    hamiltonian_linear_matrices, linear_part, lyapunov_stationary_cov, spectral_abscissa, GaussianReference,
    LyapunovSolution,
};
pub use sampler::{empirical_covariance, sample_invariant, Dynamics, ErgodicSampler, GibbsReference};
