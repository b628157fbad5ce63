//! Decomposition of a p x q grid of linked data matrices into globally
//! shared, row-shared, column-shared, and individual low-rank components by
//! nuclear-norm-penalized least squares, with random-matrix tuning, EM-style
//! missing-value imputation, a synthetic-data generator, and a benchmark
//! harness.
//!
//! The entry points are [`solver::issvt_fit`] for fully observed grids,
//! [`impute::impute`] when entries, rows, or columns are missing,
//! [`scale::preprocess`] / [`penalty::PenaltyScheme::rmt_default`] for the
//! standard pipeline in front of either, and [`bench::run_benchmark`] for
//! Monte Carlo error tables.

pub mod bench;
pub mod error;
pub mod grid;
pub mod impute;
pub mod linalg;
pub mod metrics;
pub mod penalty;
pub mod scale;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{BlockGrid, BlockLayout, ConcatView};
pub use penalty::{ComponentId, PenaltyScheme, PenaltyViolation};
pub use scale::{estimate_sigma_mad, mp_cdf, mp_median, preprocess, CenteringMode, ScaleInfo};
pub use solver::{
    als_fit, compose_signal, issvt_fit, objective_f2, unifac_fit, Decomposition, FitReport, Init,
    SolverConfig, SolverKind,
};
