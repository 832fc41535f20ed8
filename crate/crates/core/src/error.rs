use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("zero marginal mass at {axis} index {index}")]
    ZeroMarginal { axis: &'static str, index: usize },
    #[error("zero conditioning mass at z index {0}")]
    ZeroConditioner(usize),
    #[error("rank {d} out of range 1..={max}")]
    BadRank { d: usize, max: usize },
    #[error("measure is not absolutely continuous: {0}")]
    NotAbsolutelyContinuous(String),
    #[error("covariance is numerically singular: {0}")]
    SingularCovariance(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("empty sample")]
    EmptySample,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("need at least {needed} positive values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("kernels differ between fitted models")]
    KernelMismatch,
    #[error("only {available} positive directions, {requested} requested")]
    RankDeficient { requested: usize, available: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("class {0} has no prompts")]
    MissingClass(usize),
    #[error("k = {k} exceeds number of classes {classes}")]
    BadK { k: usize, classes: usize },
    #[error("whitening failed: {0}")]
    WhiteningFailure(String),
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),
    #[error("identity check failed: {0}")]
    IdentityViolation(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
