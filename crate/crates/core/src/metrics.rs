//! Evaluation quantities: variance explained, reconstruction and imputation
//! errors, class-separation score, residual diagnostics.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::grid::BlockGrid;
use crate::scale::ScaleInfo;
use crate::solver::Decomposition;

/// Proportion of variance of `x` explained by `component`:
/// `1 - |x - component|_F^2 / |x|_F^2`. Assumes `x` is centered.
pub fn r_squared(x: ArrayView2<'_, f64>, component: ArrayView2<'_, f64>) -> Result<f64> {
    if x.dim() != component.dim() {
        return Err(Error::DimensionMismatch(format!(
            "r_squared shapes {:?} vs {:?}",
            x.dim(),
            component.dim()
        )));
    }
    let denom: f64 = x.iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("zero-norm data matrix".into()));
    }
    let num: f64 = x
        .iter()
        .zip(component.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(1.0 - num / denom)
}

/// Relative reconstruction error over all blocks:
/// `sum |true - est|_F^2 / sum |true|_F^2`. Returns `None` when the truth is
/// identically zero (the metric is undefined and rendered as a dash).
pub fn pred_err(
    truth: &[Vec<Array2<f64>>],
    est: &[Vec<Array2<f64>>],
) -> Result<Option<f64>> {
    check_grids(truth, est)?;
    let mut num = 0.0;
    let mut denom = 0.0;
    for (tr, er) in truth.iter().zip(est) {
        for (t, e) in tr.iter().zip(er) {
            num += t
                .iter()
                .zip(e.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            denom += t.iter().map(|v| v * v).sum::<f64>();
        }
    }
    if denom == 0.0 {
        return Ok(None);
    }
    Ok(Some(num / denom))
}

/// The same relative error restricted to missing cells (`mask` false marks a
/// missing cell). The denominator uses the true signal at those cells.
pub fn impute_err(
    truth: &[Vec<Array2<f64>>],
    est: &[Vec<Array2<f64>>],
    mask: &[Vec<Array2<bool>>],
) -> Result<Option<f64>> {
    check_grids(truth, est)?;
    if mask.len() != truth.len() || mask.iter().zip(truth).any(|(mr, tr)| mr.len() != tr.len()) {
        return Err(Error::DimensionMismatch("mask grid shape".into()));
    }
    let mut num = 0.0;
    let mut denom = 0.0;
    let mut missing = 0usize;
    for ((tr, er), mr) in truth.iter().zip(est).zip(mask) {
        for ((t, e), m) in tr.iter().zip(er).zip(mr) {
            if t.dim() != m.dim() {
                return Err(Error::DimensionMismatch("mask block shape".into()));
            }
            for ((r, c), &obs) in m.indexed_iter() {
                if !obs {
                    missing += 1;
                    let d = t[(r, c)] - e[(r, c)];
                    num += d * d;
                    denom += t[(r, c)] * t[(r, c)];
                }
            }
        }
    }
    if missing == 0 {
        return Err(Error::UndefinedMetric("no missing cells".into()));
    }
    if denom == 0.0 {
        return Ok(None);
    }
    Ok(Some(num / denom))
}

/// Mean of the per-component relative squared errors over (joint, individual)
/// pairs, one pair per block row.
pub fn mean_rel_error(
    truth: &[(Array2<f64>, Array2<f64>)],
    est: &[(Array2<f64>, Array2<f64>)],
) -> Result<f64> {
    if truth.len() != est.len() || truth.is_empty() {
        return Err(Error::DimensionMismatch(
            "mean_rel_error needs matching nonempty pair lists".into(),
        ));
    }
    let mut total = 0.0;
    let mut terms = 0usize;
    for ((tc, ti), (ec, ei)) in truth.iter().zip(est) {
        for (t, e) in [(tc, ec), (ti, ei)] {
            if t.dim() != e.dim() {
                return Err(Error::DimensionMismatch("component shapes".into()));
            }
            let denom: f64 = t.iter().map(|v| v * v).sum();
            if denom == 0.0 {
                return Err(Error::UndefinedMetric("zero-norm true component".into()));
            }
            let num: f64 = t
                .iter()
                .zip(e.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += num / denom;
            terms += 1;
        }
    }
    Ok(total / terms as f64)
}

/// Standardized within-class sum of squares: within-class scatter over total
/// scatter of the score rows. Lower means clearer class separation; always in
/// [0, 1].
pub fn swiss(scores: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let n = scores.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "need at least two samples".into(),
        ));
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} samples but {} labels",
            labels.len()
        )));
    }
    let d = scores.ncols();
    let classes: Vec<usize> = {
        let mut c = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    let mut overall = vec![0.0; d];
    for row in scores.rows() {
        for (k, &v) in row.iter().enumerate() {
            overall[k] += v;
        }
    }
    for v in &mut overall {
        *v /= n as f64;
    }
    let mut within = 0.0;
    for &class in &classes {
        let members: Vec<usize> = (0..n).filter(|&s| labels[s] == class).collect();
        let mut mean = vec![0.0; d];
        for &s in &members {
            for (k, &v) in scores.row(s).iter().enumerate() {
                mean[k] += v;
            }
        }
        for v in &mut mean {
            *v /= members.len() as f64;
        }
        for &s in &members {
            for (k, &v) in scores.row(s).iter().enumerate() {
                within += (v - mean[k]) * (v - mean[k]);
            }
        }
    }
    let mut total = 0.0;
    for row in scores.rows() {
        for (k, &v) in row.iter().enumerate() {
            total += (v - overall[k]) * (v - overall[k]);
        }
    }
    if total == 0.0 {
        return Err(Error::UndefinedMetric("zero total scatter".into()));
    }
    Ok(within / total)
}

/// Per-block residual histogram.
#[derive(Debug, Clone)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ResidualSummary {
    pub row_block: usize,
    pub col_block: usize,
    pub mean: f64,
    pub sd: f64,
    /// The noise scale estimated before fitting, for comparison with `sd`.
    pub sigma_hat: f64,
    pub histogram: Histogram,
}

const HISTOGRAM_BINS: usize = 50;

/// Residual summaries per block: moments, the pre-fit noise-scale estimate,
/// and a histogram over 50 equal-width bins spanning four standard
/// deviations around the mean (outliers land in the edge bins, so counts sum
/// to the number of observed entries).
pub fn residual_diagnostics(
    grid: &BlockGrid,
    theta: &Decomposition,
    info: &ScaleInfo,
) -> Result<Vec<ResidualSummary>> {
    let layout = grid.layout();
    let mut out = Vec::new();
    for i in 0..layout.p() {
        for j in 0..layout.q() {
            let s = theta.signal_block(i, j);
            if s.dim() != grid.block(i, j).dim() {
                return Err(Error::DimensionMismatch("signal block shape".into()));
            }
            let x = grid.block(i, j);
            let mask = grid.block_mask(i, j);
            let mut resid = Vec::new();
            for ((r, c), &v) in x.indexed_iter() {
                if mask.map_or(true, |m| m[(r, c)]) {
                    resid.push(v - s[(r, c)]);
                }
            }
            let n = resid.len() as f64;
            let mean = resid.iter().sum::<f64>() / n;
            let var = resid.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (n - 1.0).max(1.0);
            let sd = var.sqrt();
            let span = (4.0 * sd).max(1e-12);
            let (lo, hi) = (mean - span, mean + span);
            let mut counts = vec![0usize; HISTOGRAM_BINS];
            for &v in &resid {
                let t = ((v - lo) / (hi - lo) * HISTOGRAM_BINS as f64).floor();
                let bin = (t as isize).clamp(0, HISTOGRAM_BINS as isize - 1) as usize;
                counts[bin] += 1;
            }
            out.push(ResidualSummary {
                row_block: i,
                col_block: j,
                mean,
                sd,
                sigma_hat: info.sigma_hat[i][j],
                histogram: Histogram { lo, hi, counts },
            });
        }
    }
    Ok(out)
}

fn check_grids(a: &[Vec<Array2<f64>>], b: &[Vec<Array2<f64>>]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch(
            "block grids must have matching nonzero sizes".into(),
        ));
    }
    for (ar, br) in a.iter().zip(b) {
        if ar.len() != br.len() {
            return Err(Error::DimensionMismatch("grid row lengths".into()));
        }
        for (ab, bb) in ar.iter().zip(br) {
            if ab.dim() != bb.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "block shapes {:?} vs {:?}",
                    ab.dim(),
                    bb.dim()
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(m: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((m, n), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn r_squared_extremes() {
        let x = gaussian(10, 8, 1);
        assert_abs_diff_eq!(r_squared(x.view(), x.view()).unwrap(), 1.0, epsilon = 1e-12);
        let zero = Array2::zeros((10, 8));
        assert_abs_diff_eq!(
            r_squared(x.view(), zero.view()).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        assert!(r_squared(zero.view(), x.view()).is_err());
    }

    #[test]
    fn r_squared_complement_identity() {
        let x = gaussian(12, 9, 2);
        let s = gaussian(12, 9, 3);
        let r2 = r_squared(x.view(), s.view()).unwrap();
        let xnorm: f64 = x.iter().map(|v| v * v).sum();
        let errnorm: f64 = x
            .iter()
            .zip(s.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert_abs_diff_eq!(r2 + errnorm / xnorm, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn r_squared_is_not_additive_for_correlated_parts() {
        // non-orthogonal split: the parts overlap, so variance explained
        // does not add up
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let b = array![[0.5, 0.0], [0.0, 0.5]];
        let x = &a + &b;
        let ra = r_squared(x.view(), a.view()).unwrap();
        let rb = r_squared(x.view(), b.view()).unwrap();
        let rab = r_squared(x.view(), (&a + &b).view()).unwrap();
        assert!((ra + rb - rab).abs() > 1e-3);
    }

    #[test]
    fn pred_err_extremes() {
        let truth = vec![vec![gaussian(6, 5, 4)]];
        assert_abs_diff_eq!(
            pred_err(&truth, &truth).unwrap().unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let zero = vec![vec![Array2::zeros((6, 5))]];
        assert_abs_diff_eq!(
            pred_err(&truth, &zero).unwrap().unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert!(pred_err(&zero, &truth).unwrap().is_none());
    }

    #[test]
    fn pred_err_scale_invariance() {
        let truth = vec![vec![gaussian(6, 5, 6)]];
        let est = vec![vec![gaussian(6, 5, 7)]];
        let e1 = pred_err(&truth, &est).unwrap().unwrap();
        let truth2 = vec![vec![&truth[0][0] * 3.0]];
        let est2 = vec![vec![&est[0][0] * 3.0]];
        let e2 = pred_err(&truth2, &est2).unwrap().unwrap();
        assert_abs_diff_eq!(e1, e2, epsilon = 1e-12);
    }

    #[test]
    fn pred_err_rotation_invariance() {
        // simultaneous orthogonal rotation of truth and estimate
        let truth = gaussian(8, 6, 8);
        let est = gaussian(8, 6, 9);
        let rot = crate::linalg::thin_svd(gaussian(8, 8, 10).view()).unwrap().u;
        let e1 = pred_err(&vec![vec![truth.clone()]], &vec![vec![est.clone()]])
            .unwrap()
            .unwrap();
        let e2 = pred_err(
            &vec![vec![rot.dot(&truth)]],
            &vec![vec![rot.dot(&est)]],
        )
        .unwrap()
        .unwrap();
        assert_abs_diff_eq!(e1, e2, epsilon = 1e-10);
    }

    #[test]
    fn impute_err_basics() {
        let truth = vec![vec![gaussian(5, 5, 11)]];
        let mut mask = Array2::from_elem((5, 5), true);
        mask[(1, 2)] = false;
        mask[(3, 0)] = false;
        let masks = vec![vec![mask]];
        assert_abs_diff_eq!(
            impute_err(&truth, &truth, &masks).unwrap().unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let zero = vec![vec![Array2::zeros((5, 5))]];
        assert_abs_diff_eq!(
            impute_err(&truth, &zero, &masks).unwrap().unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let all_obs = vec![vec![Array2::from_elem((5, 5), true)]];
        assert!(impute_err(&truth, &zero, &all_obs).is_err());
    }

    #[test]
    fn impute_err_equals_pred_err_when_all_missing() {
        let truth = vec![vec![gaussian(5, 4, 12)]];
        let est = vec![vec![gaussian(5, 4, 13)]];
        let none = vec![vec![Array2::from_elem((5, 4), false)]];
        let a = impute_err(&truth, &est, &none).unwrap().unwrap();
        let b = pred_err(&truth, &est).unwrap().unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn mean_rel_error_extremes() {
        let truth = vec![(gaussian(5, 4, 14), gaussian(5, 4, 15))];
        assert_abs_diff_eq!(
            mean_rel_error(&truth, &truth).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let zeros = vec![(Array2::zeros((5, 4)), Array2::zeros((5, 4)))];
        assert_abs_diff_eq!(mean_rel_error(&truth, &zeros).unwrap(), 1.0, epsilon = 1e-12);
        assert!(mean_rel_error(&zeros, &truth).is_err());
    }

    #[test]
    fn swiss_extremes_and_invariances() {
        // one class: within equals total
        let scores = gaussian(10, 3, 16);
        let one_class = vec![0usize; 10];
        assert_abs_diff_eq!(swiss(scores.view(), &one_class).unwrap(), 1.0, epsilon = 1e-12);
        // two tight clusters far apart
        let mut tight = Array2::zeros((6, 2));
        for r in 3..6 {
            tight[(r, 0)] = 10.0;
        }
        let labels = vec![0, 0, 0, 1, 1, 1];
        assert_abs_diff_eq!(swiss(tight.view(), &labels).unwrap(), 0.0, epsilon = 1e-12);
        // label permutation and translation invariance
        let relabeled: Vec<usize> = labels.iter().map(|&l| 7 - l).collect();
        let shifted = &scores + 5.0;
        let labels10 = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let a = swiss(scores.view(), &labels10).unwrap();
        let b = swiss(shifted.view(), &labels10).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        let c = swiss(tight.view(), &relabeled).unwrap();
        assert_abs_diff_eq!(c, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn swiss_decreases_with_separation() {
        let mut prev = f64::INFINITY;
        for sep in [0.0, 1.0, 3.0, 10.0] {
            let mut scores = gaussian(40, 2, 17);
            for r in 20..40 {
                scores[(r, 0)] += sep;
            }
            let labels: Vec<usize> = (0..40).map(|r| usize::from(r >= 20)).collect();
            let s = swiss(scores.view(), &labels).unwrap();
            assert!(s <= prev + 1e-12);
            assert!((0.0..=1.0).contains(&s));
            prev = s;
        }
    }

    #[test]
    fn residual_histogram_counts_sum() {
        use crate::grid::BlockGrid;
        use crate::scale::{preprocess, CenteringMode};
        let x = gaussian(30, 20, 18);
        let grid = BlockGrid::new(vec![vec![x]]).unwrap();
        let (scaled, info) = preprocess(&grid, CenteringMode::Overall).unwrap();
        let theta = Decomposition::zeros(scaled.layout());
        let summaries = residual_diagnostics(&scaled, &theta, &info).unwrap();
        assert_eq!(summaries.len(), 1);
        assert_eq!(
            summaries[0].histogram.counts.iter().sum::<usize>(),
            30 * 20
        );
        // zero estimate on noise: sd close to the generating scale (1 after
        // preprocessing)
        assert!((summaries[0].sd - 1.0).abs() < 0.1);
    }
}
