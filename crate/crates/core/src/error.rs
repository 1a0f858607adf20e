use thiserror::Error;

/// Errors raised anywhere in the laboratory.
///
/// Variants are grouped by the kind of failure rather than by module so
/// that front ends can map them onto a small set of exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("Hermite order {order} exceeds the supported maximum {max}")]
    UnsupportedOrder { order: usize, max: usize },

    #[error("non-finite function value {value} at node x = {node}")]
    Evaluation { node: f64, value: f64 },

    #[error("Hermite rank undetermined: every coefficient of order >= 1 is below {tol:e}")]
    RankUndetermined { tol: f64 },

    #[error("shift by {shift} leaves an empty expansion (qmax = {qmax})")]
    EmptyExpansion { shift: usize, qmax: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("argument {name} = {value} outside its domain: {reason}")]
    Domain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("lookup at h = {h} outside the tabulated range [0, {max}]")]
    Range { h: f64, max: f64 },

    #[error("covariance value {value} at lag {h} violates |rho| <= 1")]
    InvalidCovariance { h: f64, value: f64 },

    #[error("degenerate increment variance at u = {at}")]
    Degenerate { at: f64 },

    #[error("mixed derivative is singular on the diagonal u = v = {at}")]
    Singular { at: f64 },

    #[error("|rho|^{power} is not integrable: {reason}")]
    NotIntegrable { power: usize, reason: String },

    #[error("numerical precision target missed: {what} (residual {residual:e})")]
    Precision { what: String, residual: f64 },

    #[error("regime mismatch: {0}")]
    Regime(String),

    #[error("circulant embedding not nonnegative: most negative eigenvalue {min_eigenvalue:e} at size {size}")]
    Embedding { min_eigenvalue: f64, size: usize },

    #[error("covariance matrix not positive definite at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },

    #[error("grid of {len} points with step {delta} does not cover [0, {needed}]")]
    Coverage { needed: f64, len: usize, delta: f64 },

    #[error("eps = {eps} is not an integer multiple of the grid step {delta}")]
    Alignment { eps: f64, delta: f64 },

    #[error("problem size {size} exceeds the guard {limit}")]
    Size { size: usize, limit: usize },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("replicate {replicate} failed: {source}")]
    Replicate {
        replicate: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
