//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must have at least one row and one column, got {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("SVD did not converge for a {rows}x{cols} matrix")]
    SvdNoConvergence { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("block ({row_block}, {col_block}) has no observed entries")]
    AllMissingBlock { row_block: usize, col_block: usize },

    #[error("solver requires a fully observed grid, but block ({row_block}, {col_block}) has missing entries; run imputation first")]
    MissingEntries { row_block: usize, col_block: usize },

    #[error("objective became non-finite at sweep {sweep}; input data is likely corrupted")]
    NonFiniteObjective { sweep: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
