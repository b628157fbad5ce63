//! Preprocessing: centering, noise-scale estimation, and back-transformation.
//!
//! Every block is centered (mode-dependent) and divided by a noise-scale
//! estimate so that all blocks carry roughly unit noise variance, which is the
//! regime the default penalties are designed for. The scale estimate is the
//! median singular value divided by the square root of the median of the
//! Marchenko-Pastur distribution, converted to raw singular-value scale by a
//! `sqrt(max(m, n))` factor.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::grid::BlockGrid;
use crate::linalg::singular_values;

/// How blocks are centered before scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CenteringMode {
    /// Subtract each block's overall mean (the default).
    Overall,
    /// Subtract per-row means computed across the whole grid row, so features
    /// are centered against all samples they appear with.
    RowwiseAcrossGrid,
    /// Leave the data as is.
    None,
}

/// Centering values recorded per block so the transform can be undone.
#[derive(Debug, Clone)]
pub enum CenterOffsets {
    /// One scalar per block.
    Overall(Vec<Vec<f64>>),
    /// One vector per grid row, shared by every block in that row.
    Rowwise(Vec<Array1<f64>>),
    None,
}

/// Everything needed to map a preprocessed grid (or components estimated from
/// it) back to the original scale.
#[derive(Debug, Clone)]
pub struct ScaleInfo {
    pub mode: CenteringMode,
    pub offsets: CenterOffsets,
    /// Noise-scale estimate per block, all strictly positive.
    pub sigma_hat: Vec<Vec<f64>>,
}

impl ScaleInfo {
    /// The centering offset applied at cell (r, _) of block (i, j).
    fn offset_at(&self, i: usize, j: usize, r: usize) -> f64 {
        match &self.offsets {
            CenterOffsets::Overall(o) => o[i][j],
            CenterOffsets::Rowwise(o) => o[i][r],
            CenterOffsets::None => 0.0,
        }
    }

    /// Maps a component block estimated on the preprocessed scale back to the
    /// original scale (multiplies by the block's noise scale; no offsets,
    /// which belong to the data mean rather than to any single component).
    pub fn rescale_component_block(&self, i: usize, j: usize, block: &ArrayView2<f64>) -> Array2<f64> {
        block.mapv(|x| x * self.sigma_hat[i][j])
    }

    /// Maps a signal (or completed data) block back to the original scale:
    /// multiplies by the noise scale and restores the centering offsets.
    pub fn restore_block(&self, i: usize, j: usize, block: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = block.mapv(|x| x * self.sigma_hat[i][j]);
        for ((r, _c), v) in out.indexed_iter_mut() {
            *v += self.offset_at(i, j, r);
        }
        out
    }

    /// Undoes `preprocess` on a whole grid. Masked cells stay masked.
    pub fn back_transform(&self, grid: &BlockGrid) -> Result<BlockGrid> {
        let layout = grid.layout();
        let mut blocks = Vec::with_capacity(layout.p());
        for i in 0..layout.p() {
            let mut row = Vec::with_capacity(layout.q());
            for j in 0..layout.q() {
                row.push(self.restore_block(i, j, &grid.block(i, j).view()));
            }
            blocks.push(row);
        }
        match grid.mask() {
            None => BlockGrid::new(blocks),
            Some(mask) => BlockGrid::with_mask(blocks, mask.clone()),
        }
    }
}

/// Median of the Marchenko-Pastur distribution with aspect ratio
/// `beta = min(m, n) / max(m, n)` in (0, 1].
///
/// The density on [(1 - sqrt(beta))^2, (1 + sqrt(beta))^2] is integrated by
/// adaptive Simpson after the substitution x = a + (b - a) sin^2(theta), which
/// removes the square-root endpoint singularities; the median is then located
/// by bisection to an absolute tolerance of 1e-8.
pub fn mp_median(beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let (a, b) = mp_support(beta);
    let total = mp_mass_up_to(beta, b);
    let (mut lo, mut hi) = (a, b);
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        if mp_mass_up_to(beta, mid) / total < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Cumulative distribution function of the Marchenko-Pastur law.
pub fn mp_cdf(beta: f64, x: f64) -> Result<f64> {
    check_beta(beta)?;
    let (a, b) = mp_support(beta);
    if x <= a {
        return Ok(0.0);
    }
    if x >= b {
        return Ok(1.0);
    }
    Ok(mp_mass_up_to(beta, x) / mp_mass_up_to(beta, b))
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "aspect ratio must be in (0, 1], got {beta}"
        )));
    }
    Ok(())
}

fn mp_support(beta: f64) -> (f64, f64) {
    let s = beta.sqrt();
    ((1.0 - s) * (1.0 - s), (1.0 + s) * (1.0 + s))
}

/// Density mass on [a, x0], integrated in the smooth theta parameterization.
fn mp_mass_up_to(beta: f64, x0: f64) -> f64 {
    let (a, b) = mp_support(beta);
    let span = b - a;
    let x0 = x0.clamp(a, b);
    let theta0 = ((x0 - a) / span).sqrt().min(1.0).asin();
    let integrand = |theta: f64| {
        let s2 = (2.0 * theta).sin().powi(2);
        let x = a + span * theta.sin().powi(2);
        if x <= 0.0 {
            // removable singularity at theta = 0 when beta = 1
            span / (std::f64::consts::PI * beta)
        } else {
            span * span * s2 / (4.0 * std::f64::consts::PI * beta * x)
        }
    };
    adaptive_simpson(&integrand, 0.0, theta0, 1e-10, 40)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(f, a, b, fa, fb, fc, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let (fd, fe) = (f(d), f(e));
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        simpson_step(f, a, c, fa, fc, fd, left, tol / 2.0, depth - 1)
            + simpson_step(f, c, b, fc, fb, fe, right, tol / 2.0, depth - 1)
    }
}

/// Noise-scale estimate: median singular value over the Marchenko-Pastur
/// median edge, `sigma = med(d) / sqrt(max(m, n) * mp_median(min/max))`.
///
/// Even-length medians average the two central values.
pub fn estimate_sigma_mad(x: ArrayView2<'_, f64>) -> Result<f64> {
    let (m, n) = (x.nrows(), x.ncols());
    if m.min(n) < 2 {
        return Err(Error::InvalidArgument(format!(
            "noise-scale estimation needs min(m, n) >= 2, got {m}x{n}"
        )));
    }
    let d = singular_values(x)?;
    let k = d.len();
    // singular values come back sorted nonincreasing
    let med = if k % 2 == 1 {
        d[k / 2]
    } else {
        0.5 * (d[k / 2 - 1] + d[k / 2])
    };
    let beta = m.min(n) as f64 / m.max(n) as f64;
    let sigma = med / (m.max(n) as f64 * mp_median(beta)?).sqrt();
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument(
            "noise scale is zero; the block has no spread".into(),
        ));
    }
    Ok(sigma)
}

/// Centers and scales every block, returning the transformed grid and the
/// information needed to undo the transform.
///
/// Offsets and scale estimates use observed entries only; for the scale
/// estimate, missing cells of the centered block are filled with the block's
/// observed mean (zero after overall centering) before taking the SVD.
pub fn preprocess(grid: &BlockGrid, mode: CenteringMode) -> Result<(BlockGrid, ScaleInfo)> {
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

    let offsets = match mode {
        CenteringMode::Overall => {
            let mut per_block = vec![vec![0.0; q]; p];
            for i in 0..p {
                for j in 0..q {
                    per_block[i][j] = observed_mean(grid, i, j);
                }
            }
            CenterOffsets::Overall(per_block)
        }
        CenteringMode::RowwiseAcrossGrid => {
            let mut per_row_block = Vec::with_capacity(p);
            for i in 0..p {
                let m_i = layout.row_dims()[i];
                let mut sums = Array1::<f64>::zeros(m_i);
                let mut counts = Array1::<f64>::zeros(m_i);
                for j in 0..q {
                    let block = grid.block(i, j);
                    let mask = grid.block_mask(i, j);
                    for ((r, c), &v) in block.indexed_iter() {
                        if mask.map_or(true, |m| m[(r, c)]) {
                            sums[r] += v;
                            counts[r] += 1.0;
                        }
                    }
                }
                // rows with no observation anywhere in the grid row are left
                // uncentered
                let means = Array1::from_shape_fn(m_i, |r| {
                    if counts[r] > 0.0 {
                        sums[r] / counts[r]
                    } else {
                        0.0
                    }
                });
                per_row_block.push(means);
            }
            CenterOffsets::Rowwise(per_row_block)
        }
        CenteringMode::None => CenterOffsets::None,
    };

    let partial = ScaleInfo {
        mode,
        offsets,
        sigma_hat: vec![vec![1.0; q]; p],
    };

    let mut sigma_hat = vec![vec![0.0; q]; p];
    let mut blocks = Vec::with_capacity(p);
    for i in 0..p {
        let mut row = Vec::with_capacity(q);
        for j in 0..q {
            let block = grid.block(i, j);
            let mask = grid.block_mask(i, j);
            let mut centered = Array2::zeros(block.dim());
            for ((r, c), v) in centered.indexed_iter_mut() {
                if mask.map_or(true, |m| m[(r, c)]) {
                    *v = block[(r, c)] - partial.offset_at(i, j, r);
                }
            }
            // fill missing cells with the centered observed mean for the SVD
            let (fill, count) = centered.indexed_iter().fold((0.0, 0usize), |acc, ((r, c), &v)| {
                if mask.map_or(true, |m| m[(r, c)]) {
                    (acc.0 + v, acc.1 + 1)
                } else {
                    acc
                }
            });
            let fill = fill / count as f64;
            let mut filled = centered.clone();
            if let Some(m) = mask {
                for ((r, c), v) in filled.indexed_iter_mut() {
                    if !m[(r, c)] {
                        *v = fill;
                    }
                }
            }
            let sigma = estimate_sigma_mad(filled.view())?;
            sigma_hat[i][j] = sigma;
            let mut scaled = centered;
            for ((r, c), v) in scaled.indexed_iter_mut() {
                if mask.map_or(true, |m| m[(r, c)]) {
                    *v /= sigma;
                } else {
                    *v = f64::NAN;
                }
            }
            row.push(scaled);
        }
        blocks.push(row);
    }

    let info = ScaleInfo {
        sigma_hat,
        ..partial
    };
    let out = match grid.mask() {
        None => BlockGrid::new(blocks)?,
        Some(mask) => BlockGrid::with_mask(blocks, mask.clone())?,
    };
    Ok((out, info))
}

fn observed_mean(grid: &BlockGrid, i: usize, j: usize) -> f64 {
    let block = grid.block(i, j);
    let mask = grid.block_mask(i, j);
    let (sum, count) = block.indexed_iter().fold((0.0, 0usize), |acc, ((r, c), &v)| {
        if mask.map_or(true, |m| m[(r, c)]) {
            (acc.0 + v, acc.1 + 1)
        } else {
            acc
        }
    });
    sum / count as f64
}
