use thiserror::Error;

/// Errors raised by the key-rate pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("mode index {index} out of range for {n_modes} mode(s)")]
    ModeOutOfRange { index: usize, n_modes: usize },

    #[error("beamsplitter needs two distinct modes, got {0} twice")]
    SameMode(usize),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("covariance matrix is not physical (offending value {0})")]
    Unphysical(f64),

    #[error("channel with T = 1 has no entangling cloner")]
    NoCloner,

    #[error("kept ensemble has no Alice-Bob correlation; no key is possible")]
    NoCorrelation,

    #[error("extracted effective transmission is superunital (eta = {0})")]
    Superunital(f64),

    #[error(
        "unphysical effective state (V_alpha = {v_alpha}, eta = {eta}, delta = {delta}, \
         min symplectic eigenvalue = {min_eigenvalue})"
    )]
    UnphysicalEffectiveState {
        v_alpha: f64,
        eta: f64,
        delta: f64,
        min_eigenvalue: f64,
    },

    #[error("post-selection region has vanishing probability ({0:e})")]
    Underflow(f64),

    #[error("optimization failed: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check(cond: bool, name: &'static str, value: f64, reason: &'static str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, value, reason })
    }
}
