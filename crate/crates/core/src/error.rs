use thiserror::Error;

/// Errors produced by mechanism evaluation, audits and searches.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid bid {value} at position {index}: bids must lie in [0, 1]")]
    BidOutOfRange { index: usize, value: f64 },

    #[error("bid vector must contain at least one bid")]
    EmptyBids,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("pdf supremum {sup} exceeds the configured cap {cap}")]
    UnboundedPdf { sup: f64, cap: f64 },

    #[error("operation needs at least two users (got n = {0})")]
    TooFewUsers(usize),

    #[error(
        "allocation decreases by {drop:e} near t = {at}; Myerson payments need a monotone slice"
    )]
    NonMonotoneAllocation { at: f64, drop: f64 },

    #[error(
        "exact enumeration needs {required} ordered prefixes (limit {limit}); use Monte Carlo allocation"
    )]
    SizeGuard { required: u128, limit: u128 },

    #[error("lambda0 = {0} must exceed e/(e-1) ~ 1.582")]
    ThresholdDomain(f64),

    #[error(
        "sample budget too small: standard error {se:e} at the truthful bid exceeds {limit:e}"
    )]
    SampleBudget { se: f64, limit: f64 },

    #[error("h bracket failure: mechanism still feasible at h = {0}")]
    BracketFailure(f64),

    #[error("user index {index} out of range for n = {n}")]
    UserIndex { index: usize, n: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
