use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("model `{model}` requires p = {expected}, got p = {got}")]
    IndexDimension {
        model: String,
        expected: usize,
        got: usize,
    },

    #[error("custom model `{0}` needs a label sampler")]
    MissingSampler(String),

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("dimension mismatch: expected flat dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("label y = {y} is outside the support of model `{model}`")]
    OutsideSupport { model: String, y: f64 },

    #[error("G(y_{sample}) + {shift}·I is singular (eigenvalue {eigenvalue} of G)")]
    SingularBlock {
        sample: usize,
        eigenvalue: f64,
        shift: f64,
    },

    #[error("flat dimension {dim} exceeds the dense cap {cap}")]
    CapExceeded { dim: usize, cap: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("model `{0}` has no joint eigenbasis")]
    NoJointBasis(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("root bracketing failed: {0}")]
    Bracket(String),

    #[error("alpha = {alpha} is not above the critical value alpha_c = {alpha_c}")]
    BelowThreshold { alpha: f64, alpha_c: f64 },

    #[error("model is not weakly learnable at linear sample complexity (nu_1 = {0})")]
    NotLearnable(f64),

    #[error("iteration diverged at step {iteration}: norm {norm:.3e}, growth rate {rate:.4}")]
    Diverged {
        iteration: usize,
        norm: f64,
        rate: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operator asymmetry {asymmetry:.3e} exceeds tolerance {tolerance:.3e}")]
    Asymmetric { asymmetry: f64, tolerance: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
