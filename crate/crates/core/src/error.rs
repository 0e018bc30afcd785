use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{what} out of domain: {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("heavy-tail overflow on path {path} at t = {time}: |X| = {norm:e}")]
    Overflow { path: usize, time: f64, norm: f64 },

    #[error("too many overflowed paths: {count} of {total} (first on path {first_path} at t = {first_time})")]
    OverflowFraction { count: usize, total: usize, first_path: usize, first_time: f64 },

    #[error("matrix not positive definite at probe {probe:?}: smallest eigenvalue {min_eigenvalue:e} below threshold {threshold:e}")]
    NotPositiveDefinite { probe: Vec<f64>, min_eigenvalue: f64, threshold: f64 },

    #[error("singular diffusion matrix at {point:?}")]
    SingularDiffusion { point: Vec<f64> },

    #[error("jump integral tail is not integrable: growth exponent {growth:.3} >= alpha = {alpha}")]
    UnboundedTail { growth: f64, alpha: f64 },

    #[error("problem size {size} exceeds cap {cap}; use sliced or subsampled estimation")]
    SizeCap { size: usize, cap: usize },

    #[error("CDF not monotone near x = {x}")]
    NonMonotoneCdf { x: f64 },

    #[error("comparison function check `{property}` failed at r = {r} (residual {residual:e})")]
    PsiProperty { property: &'static str, r: f64, residual: f64 },

    #[error("nonpositive constant {0}")]
    NonPositiveConstant(&'static str),
}

impl Error {
    /// Whether the error stems from invalid parameters rather than from the
    /// numerics of an otherwise valid run.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Domain { .. } | Error::Usage(_) | Error::NotPositiveDefinite { .. } | Error::NonPositiveConstant(_)
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}

pub(crate) fn domain(what: &'static str, value: f64) -> Error {
    Error::Domain { what, value }
}
