use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid kernel spec: {0}")]
    InvalidKernelSpec(String),

    #[error("kernel kind `{kind}` requires {what}")]
    MissingColumn { kind: &'static str, what: &'static str },

    #[error("annealed kernel requires non-negative features, found {value} at row {row}, column {col}")]
    NegativeFeature { row: usize, col: usize, value: f64 },

    #[error("non-finite value {value} at row {row}, column {col}")]
    NonFinite { row: usize, col: usize, value: f64 },

    #[error("kernel is not positive semidefinite: eigenvalue {eigenvalue:e} below tolerance {tolerance:e}")]
    NotPositiveSemidefinite { eigenvalue: f64, tolerance: f64 },

    #[error("eigendecomposition did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("matrix is not symmetric: |L[{i},{j}] - L[{j},{i}]| = {diff:e}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },

    #[error("mini-batch size k = {k} exceeds effective rank {effective_rank} of the kernel")]
    RankDeficient { k: usize, effective_rank: usize },

    #[error("invalid mini-batch size k = {k} for N = {n}")]
    InvalidBatchSize { k: usize, n: usize },

    #[error("negative eigenvalue {0:e} passed to elementary symmetric polynomials")]
    NegativeEigenvalue(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("enumeration of C({n}, {k}) = {count} subsets exceeds budget {budget}; use Monte Carlo mode")]
    EnumerationBudget { n: usize, k: usize, count: u128, budget: u128 },

    #[error("subset has {got} items, expected {expected}")]
    SubsetSize { got: usize, expected: usize },

    #[error("index {index} out of range for N = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("zero marginal probability for item {0}")]
    ZeroMarginal(usize),

    #[error("non-finite gradient for example {0}")]
    NonFiniteGradient(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("schedule mismatch: {0}")]
    ScheduleMismatch(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }
}
