//! Monte Carlo laboratory for integration-by-parts (Bismut type) formulas of
//! Markov semigroups generated by spectrally truncated semilinear SPDEs,
//! stochastic Hamiltonian systems and delay equations.
//!
//! The crate simulates the truncated dynamics with an exponential-Euler
//! scheme that keeps the Brownian increments, builds the explicit stochastic
//! weights from those increments, and checks the identities
//! `P_T(d_k f)(x) = E[f(X_T) M]` together with the derived invariant-measure
//! bounds by paired Monte Carlo and independent oracles.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod drift;
pub mod error;
pub mod harness;
pub mod measures;
pub mod quad;
pub mod simulate;
pub mod spectral;
pub mod weights;

pub use error::{Error, Result};
pub use spectral::{HVector, SigmaOperator, SpectralOperator};
