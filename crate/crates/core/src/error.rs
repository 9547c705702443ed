use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("time {t} outside of domain [{a}, {b}]")]
    OutOfDomain { t: f64, a: f64, b: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("neutral functional is not strictly delayed: support reaches {support_sup}")]
    NotStrictlyDelayed { support_sup: f64 },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid piecewise function: {0}")]
    InvalidFunction(String),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("mollification width 1/{m} does not fit the breakpoint gap {gap}")]
    GapTooSmall { m: usize, gap: f64 },

    #[error(
        "Picard iteration did not converge on step {step} after {iterations} iterations \
         (last change {last_change:e}, contraction factor {factor})"
    )]
    PicardDiverged {
        step: usize,
        iterations: usize,
        last_change: f64,
        factor: f64,
    },

    #[error("measure has a density part; the symbolic oracle supports atoms only")]
    UnsupportedMeasure,

    #[error("all samples vanish; growth fit undefined")]
    AllZero,

    #[error("{what} violated at t = {t}: lhs {lhs:e} > rhs {rhs:e}")]
    BoundViolated { what: String, t: f64, lhs: f64, rhs: f64 },

    #[error("horizon mismatch: {0}")]
    HorizonMismatch(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
