use thiserror::Error;

/// Errors raised across the market, solver, verifier and diffusion modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid market: {0}")]
    InvalidMarket(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// 1 lies in the span of the trading gains, so no signed martingale
    /// measure exists.
    #[error("no signed martingale measure: 1 ∈ span K_0 (residual {residual:.3e})")]
    Infeasible { residual: f64 },

    #[error(
        "{solver} did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})"
    )]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        grad_norm: f64,
        best: Vec<f64>,
    },

    #[error("invalid exponent q = {0}: must be > 1")]
    InvalidExponent(f64),

    #[error("incompatible results: {0}")]
    Incompatible(String),

    #[error("degenerate candidate: {0}")]
    DegenerateCandidate(String),

    #[error("affine dimension {k} exceeds the brute-force limit {max}")]
    TooManyDimensions { k: usize, max: usize },

    #[error("volatility {sigma:.3e} below floor on path {path}, step {step}")]
    VanishingVolatility {
        path: usize,
        step: usize,
        sigma: f64,
    },

    #[error("non-finite path functional on path {path}: {what}")]
    NonFinite { path: usize, what: String },

    #[error("invalid simulation input: {0}")]
    InvalidSimulation(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
