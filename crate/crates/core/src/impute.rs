//! EM-style missing-value imputation by repeated fits.
//!
//! Missing cells are initialized from observed column means (falling back to
//! row means, then the block mean), then the algorithm alternates a full fit
//! of the decomposition on the completed grid with replacement of the missing
//! cells by the fitted signal, warm-starting each fit from the previous
//! estimate, until the summed squared change over the missing cells drops
//! below the tolerance. Entries, whole rows, and whole columns can all be
//! missing, as long as they are missing at random (not verified here) and
//! every block keeps at least one observed cell.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::BlockGrid;
use crate::penalty::PenaltyScheme;
use crate::solver::{issvt_fit, Decomposition, FitReport, Init, SolverConfig};

#[derive(Debug, Clone)]
pub struct ImputeConfig {
    /// Absolute threshold for the summed squared change over missing cells;
    /// `None` uses `1e-6` per missing entry.
    pub outer_tol: Option<f64>,
    pub max_outer: usize,
    /// Settings for the inner fits. The stated `rel_tol` is used for the
    /// final fit; intermediate warm-started fits run at the looser of it and
    /// `1e-6`.
    pub inner: SolverConfig,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        Self {
            outer_tol: None,
            max_outer: 100,
            inner: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImputeReport {
    pub outer_iterations: usize,
    pub converged: bool,
    /// Summed squared change over the missing cells, one entry per outer
    /// iteration.
    pub change_trace: Vec<f64>,
    /// Report of the final fit.
    pub fit: FitReport,
}

/// Completes a partially observed grid.
///
/// Returns the completed grid (fully observed, identical to the input on
/// every observed cell), the final decomposition, and a report. On a fully
/// observed input this reduces to a single fit with no replacement steps.
pub fn impute(
    grid: &BlockGrid,
    scheme: &PenaltyScheme,
    config: &ImputeConfig,
) -> Result<(BlockGrid, Decomposition, ImputeReport)> {
    let layout = grid.layout();
    let (p, q) = (layout.p(), layout.q());
    for i in 0..p {
        for j in 0..q {
            if grid.observed_count(i, j) == 0 {
                return Err(Error::AllMissingBlock {
                    row_block: i,
                    col_block: j,
                });
            }
        }
    }

    if grid.is_fully_observed() {
        let plain = BlockGrid::new(grid.blocks().clone())?;
        let (theta, fit) = issvt_fit(&plain, scheme, &config.inner)?;
        return Ok((
            plain,
            theta,
            ImputeReport {
                outer_iterations: 0,
                converged: true,
                change_trace: Vec::new(),
                fit,
            },
        ));
    }

    let mask = grid.mask().expect("not fully observed").clone();
    let mut missing: Vec<(usize, usize, usize, usize)> = Vec::new();
    for i in 0..p {
        for j in 0..q {
            for ((r, c), &obs) in mask[i][j].indexed_iter() {
                if !obs {
                    missing.push((i, j, r, c));
                }
            }
        }
    }
    let tol = config
        .outer_tol
        .unwrap_or(1e-6 * missing.len() as f64);
    if tol <= 0.0 || config.max_outer == 0 {
        return Err(Error::InvalidArgument(
            "imputation tolerances must be positive".into(),
        ));
    }

    let mut completed = initialize_missing(grid, &mask);
    let loose = SolverConfig {
        rel_tol: config.inner.rel_tol.max(1e-6),
        ..config.inner.clone()
    };

    let mut theta: Option<Decomposition> = None;
    let mut change_trace = Vec::new();
    let mut converged = false;
    let mut outer = 0;
    while outer < config.max_outer {
        outer += 1;
        let working = BlockGrid::new(completed.clone())?;
        let cfg = SolverConfig {
            init: match &theta {
                None => Init::Zeros,
                Some(t) => Init::Warm(Box::new(t.clone())),
            },
            ..loose.clone()
        };
        let (fit_theta, _) = issvt_fit(&working, scheme, &cfg)?;
        let mut change = 0.0;
        for &(i, j, r, c) in &missing {
            let new = fit_theta.signal_block(i, j)[(r, c)];
            let old = completed[i][j][(r, c)];
            change += (old - new) * (old - new);
        }
        // one pass per block instead of recomposing per cell
        for i in 0..p {
            for j in 0..q {
                let s = fit_theta.signal_block(i, j);
                for ((r, c), &obs) in mask[i][j].indexed_iter() {
                    if !obs {
                        completed[i][j][(r, c)] = s[(r, c)];
                    }
                }
            }
        }
        theta = Some(fit_theta);
        change_trace.push(change);
        if change < tol {
            converged = true;
            break;
        }
    }

    // final fit at the tight tolerance, warm-started; refresh the completed
    // cells so the output matches the reported decomposition
    let working = BlockGrid::new(completed.clone())?;
    let cfg = SolverConfig {
        init: Init::Warm(Box::new(theta.expect("at least one outer iteration"))),
        ..config.inner.clone()
    };
    let (theta, fit) = issvt_fit(&working, scheme, &cfg)?;
    for i in 0..p {
        for j in 0..q {
            let s = theta.signal_block(i, j);
            for ((r, c), &obs) in mask[i][j].indexed_iter() {
                if !obs {
                    completed[i][j][(r, c)] = s[(r, c)];
                }
            }
        }
    }

    Ok((
        BlockGrid::new(completed)?,
        theta,
        ImputeReport {
            outer_iterations: outer,
            converged,
            change_trace,
            fit,
        },
    ))
}

/// Observed column mean, then observed row mean, then the block's observed
/// mean, whichever is defined first.
fn initialize_missing(grid: &BlockGrid, mask: &[Vec<Array2<bool>>]) -> Vec<Vec<Array2<f64>>> {
    let layout = grid.layout();
    let mut out = Vec::with_capacity(layout.p());
    for i in 0..layout.p() {
        let mut row = Vec::with_capacity(layout.q());
        for j in 0..layout.q() {
            let block = grid.block(i, j);
            let m = &mask[i][j];
            let (rows, cols) = block.dim();
            let mut col_sum = vec![0.0; cols];
            let mut col_cnt = vec![0usize; cols];
            let mut row_sum = vec![0.0; rows];
            let mut row_cnt = vec![0usize; rows];
            let mut all_sum = 0.0;
            let mut all_cnt = 0usize;
            for ((r, c), &obs) in m.indexed_iter() {
                if obs {
                    let v = block[(r, c)];
                    col_sum[c] += v;
                    col_cnt[c] += 1;
                    row_sum[r] += v;
                    row_cnt[r] += 1;
                    all_sum += v;
                    all_cnt += 1;
                }
            }
            let block_mean = all_sum / all_cnt as f64;
            let mut filled = block.clone();
            for ((r, c), v) in filled.indexed_iter_mut() {
                if !m[(r, c)] {
                    *v = if col_cnt[c] > 0 {
                        col_sum[c] / col_cnt[c] as f64
                    } else if row_cnt[r] > 0 {
                        row_sum[r] / row_cnt[r] as f64
                    } else {
                        block_mean
                    };
                }
            }
            row.push(filled);
        }
        out.push(row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{apply_missingness, generate_design, Design, MissingPattern, SimParams, SnrSpec};

    fn small_params(seed: u64) -> SimParams {
        SimParams {
            design: Design::Design2,
            row_dims: vec![40, 40],
            col_dims: vec![40, 40],
            total_rank: 6,
            snr: SnrSpec::Fixed(2.0),
            seed,
        }
    }

    #[test]
    fn fully_observed_grid_is_a_single_fit() {
        let (grid, _) = generate_design(&small_params(1)).unwrap();
        let scheme = PenaltyScheme::rmt_default(grid.layout().row_dims(), grid.layout().col_dims())
            .unwrap();
        let config = ImputeConfig::default();
        let (completed, theta, report) = impute(&grid, &scheme, &config).unwrap();
        assert_eq!(report.outer_iterations, 0);
        assert!(report.converged);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(completed.block(i, j), grid.block(i, j));
            }
        }
        let (theta2, _) = issvt_fit(&grid, &scheme, &config.inner).unwrap();
        assert_eq!(theta.global, theta2.global);
    }

    #[test]
    fn observed_entries_are_never_modified() {
        let (grid, _) = generate_design(&small_params(2)).unwrap();
        let masked = apply_missingness(&grid, MissingPattern::Cells { per_block: 40 }, 7).unwrap();
        let scheme = PenaltyScheme::rmt_default(grid.layout().row_dims(), grid.layout().col_dims())
            .unwrap();
        let (completed, _, report) = impute(&masked, &scheme, &ImputeConfig::default()).unwrap();
        let mask = masked.mask().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for ((r, c), &obs) in mask[i][j].indexed_iter() {
                    if obs {
                        assert_eq!(completed.block(i, j)[(r, c)], grid.block(i, j)[(r, c)]);
                    } else {
                        assert!(completed.block(i, j)[(r, c)].is_finite());
                    }
                }
            }
        }
        assert!(report.converged);
        assert!(report.change_trace.iter().all(|c| c.is_finite()));
        assert!(*report.change_trace.last().unwrap() < 1e-6 * 160.0);
    }

    #[test]
    fn low_rank_block_is_recovered() {
        // noiseless rank-3 single block, small penalty, 5% cells hidden
        use ndarray::Array2;
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        use rand_distr::StandardNormal;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, n, r) = (60, 50, 3);
        let u = Array2::from_shape_fn((m, r), |_| rng.sample::<f64, _>(StandardNormal));
        let v = Array2::from_shape_fn((n, r), |_| rng.sample::<f64, _>(StandardNormal));
        let x = u.dot(&v.t()) * 10.0;
        let grid = BlockGrid::new(vec![vec![x.clone()]]).unwrap();
        let masked =
            apply_missingness(&grid, MissingPattern::Cells { per_block: m * n / 20 }, 9).unwrap();
        // the penalty trades completion bias (~lambda / signal singular
        // value) against how fast initialization artifacts are flushed out
        let scheme = PenaltyScheme::new(0.0, vec![0.1], vec![0.1], vec![vec![0.1]]).unwrap();
        let config = ImputeConfig {
            outer_tol: Some(1e-10),
            max_outer: 2500,
            inner: SolverConfig {
                rel_tol: 1e-10,
                max_iter: 200,
                ..SolverConfig::default()
            },
        };
        let (completed, _, report) = impute(&masked, &scheme, &config).unwrap();
        assert!(report.converged);
        let mask = masked.mask().unwrap();
        let typical = (x.iter().map(|v| v * v).sum::<f64>() / (m * n) as f64).sqrt();
        for ((r_, c), &obs) in mask[0][0].indexed_iter() {
            if !obs {
                let err = (completed.block(0, 0)[(r_, c)] - x[(r_, c)]).abs();
                assert!(
                    err / typical < 1e-3,
                    "cell ({r_}, {c}) relative error {}",
                    err / typical
                );
            }
        }
    }

    #[test]
    fn rejects_all_missing_block() {
        let blocks = vec![vec![Array2::<f64>::zeros((4, 4))]];
        let mask = vec![vec![Array2::from_elem((4, 4), false)]];
        let grid = BlockGrid::with_mask(blocks, mask).unwrap();
        let scheme = PenaltyScheme::rmt_default(&[4], &[4]).unwrap();
        assert!(matches!(
            impute(&grid, &scheme, &ImputeConfig::default()),
            Err(Error::AllMissingBlock { .. })
        ));
    }
}
