use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MmpError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown rate family {0:?}")]
    UnknownFamily(String),
    #[error("parameter {name} out of range: {reason}")]
    InvalidParam { name: String, reason: String },
    #[error("weight vanishes at n = {0}; only positive weights are supported")]
    ZeroWeight(usize),
    #[error("positivity precondition fails: {what} at index {index}")]
    Positivity { what: String, index: usize },
    #[error("negative rate g^{alpha}_(*,{beta}) produced")]
    NegativeRate { alpha: usize, beta: usize },
    #[error("weights needed up to n = {needed} but only {available} are available")]
    Extension { needed: usize, available: usize },
    #[error("series diverges: {0}")]
    Divergent(String),
    #[error("guard {name} exceeded: {requested} > {limit}")]
    Guard { name: String, limit: u128, requested: u128 },
    #[error("invalid geometry: {0}")]
    Geometry(String),
}

pub type Result<T> = std::result::Result<T, MmpError>;
