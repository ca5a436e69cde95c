//! Default probabilities of a firm whose log-asset value follows a
//! regime-switching tempered stable Lévy process with synchronous jumps.
//!
//! The forward PIDE system is discretized with Gaussian (or multiquadric /
//! cubic) radial basis function collocation in space and a θ-scheme in time.
//! The jump integral against the tempered stable measure is evaluated in its
//! compensated form so the small-jump singularity is integrable. An
//! independent Fourier-inversion solver provides reference values.

pub mod error;
pub mod quadrature;
pub mod special;
pub mod regime_chain;
pub mod levy_measures;
pub mod rbf_basis;
pub mod pide_operator;
pub mod time_stepper;
pub mod fourier_oracle;
pub mod config;
pub mod experiments;

#[cfg(test)]
pub(crate) mod test_oracles;

pub use error::{Error, Result};
