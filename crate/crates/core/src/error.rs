use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{name} out of domain: {value}")]
    Domain { name: &'static str, value: f64 },

    #[error("price {price} outside the no-arbitrage interval ({lower}, {upper})")]
    Arbitrage { price: f64, lower: f64, upper: f64 },

    #[error("insufficient data: need at least {need}, got {got}")]
    InsufficientData { need: usize, got: usize },

    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("rank-deficient problem: {0}")]
    RankDeficient(&'static str),

    #[error("grid too coarse: {reason}")]
    GridTooCoarse { reason: &'static str },

    #[error("no unimodality transition found for chi in (1, {chi_max}]")]
    NoTransition { chi_max: f64 },

    #[error("unimodality predicate is not monotone in chi near {chi}")]
    NonMonotone { chi: f64 },

    #[error("finite-difference step too large: Richardson disagreement {disagreement:e} exceeds {tolerance:e}")]
    StepTooLarge { disagreement: f64, tolerance: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Domain { name, value })
    }
}

pub(crate) fn finite(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Domain { name, value })
    }
}
