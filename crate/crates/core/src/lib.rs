//! Operator norms of piecewise-linear networks and the adversarial attacks
//! and regularizers built on them.
//!
//! The crate is organised around a dense ReLU [`network::Network`] whose
//! Jacobian is available as a [`linalg::LinearOperator`]. On top of that:
//!
//! - [`opnorm`] estimates `‖J‖_{p→q}` by power iteration or closed forms,
//! - [`attack`] runs projected-gradient attacks in ℓp balls,
//! - [`train`] fits networks under standard, adversarial and spectral objectives,
//! - [`analysis`] compares trained models (spectra, alignment, linearity),
//! - [`experiment`] runs the standard / adversarial / spectral comparison.
//!
//! With the default `parallel` feature, per-example work runs on rayon;
//! disabling it gives a purely sequential build with identical results.

pub mod analysis;
pub mod attack;
pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod loss;
pub mod network;
pub mod opnorm;
pub mod par;
pub mod rng;
pub mod train;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use linalg::{Mat, NormOrder};
pub use network::Network;
