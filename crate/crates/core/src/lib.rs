//! Spectral estimators for Gaussian multi-index models.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] — link functions, their conditional moments `G(y) = E[zzᵀ − I | y]`,
//!   synthetic data and a Monte-Carlo moment oracle;
//! * [`linops`] — matrix-free `Ĝ`, the asymmetric operator `L`, the symmetric
//!   operator `T_γ`, estimator reconstruction and eigenpair transfers;
//! * [`eig`] — power iteration, block subspace iteration, thick-restart block
//!   Lanczos and dense spectra;
//! * [`gamp`] — linear GAMP and its two spectral specialisations;
//! * [`sevo`] — state evolution, critical thresholds and predicted overlaps.
//!
//! Stacked vectors use the flat index `μ·b + i` for component `(i, μ)`, i.e. the
//! column-major layout of a `b × p` matrix.

pub mod eig;
pub mod error;
pub mod gamp;
pub mod linops;
pub mod model;
pub mod rng;
pub mod sevo;
pub mod special;

pub use error::{Error, Result};
pub use model::{build_model, Dataset, LinkModel};
