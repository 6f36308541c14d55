//! Explicit integration-by-parts weights and their deterministic ingredients.
//!
//! All weights are left-point Itô sums against the stored increments of the
//! path they belong to. With raw increments `ΔW` and `σ` invertible,
//! `⟨(σσ*)^{-1/2} v, dW̃⟩` for the whitened noise `dW̃ = (σσ*)^{-1/2}σ dW`
//! equals `⟨σ^{-1} v, dW⟩`, so every weight is computed with `σ^{-1}`.

mod delay;
mod girsanov;
mod hamiltonian;
mod phipsi;
mod semilinear;

pub use delay::{
    delay_gamma, delay_ingredients, delay_perturbation, delay_weight, delay_weight_along, DelayDirection,
    DelayIngredients, SegmentChoice,
};
pub use girsanov::{
    delay_girsanov_integrand, girsanov_density, hamiltonian_girsanov_integrand, GirsanovDensity,
};
pub use hamiltonian::{ham_h_theta, hamiltonian_weight, HamDirection, HamIngredients};
pub use phipsi::{check_ph_constraints, default_phi_psi, PhiPsi};
pub use semilinear::{fh_bound, growth, semilinear_mode_weights, semilinear_weight, EigenDirection};
