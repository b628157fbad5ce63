//! Dense linear-algebra kernels: thin SVD, soft singular-value thresholding,
//! nuclear and Frobenius norms, numerical rank.
//!
//! The SVD itself is delegated to `faer`, always on the sequential code path so
//! that results are bit-reproducible regardless of how many worker threads the
//! caller uses. A fixed sign convention is applied on top: every left singular
//! vector has a nonnegative entry of largest magnitude (ties broken by lowest
//! row index), which makes downstream outputs byte-stable.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::svd::{svd as faer_svd, svd_scratch, ComputeSvdVectors};
use faer::{Mat, Par};
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Relative tolerance (against the largest singular value) used for numerical
/// ranks when the caller does not supply one. Chosen at the backward-error
/// scale of a double-precision SVD.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Thin singular value decomposition `A = U diag(d) Vᵀ`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Left singular vectors, `m x r` with orthonormal columns.
    pub u: Array2<f64>,
    /// Singular values, nonincreasing, length `r = min(m, n)`.
    pub singular_values: Array1<f64>,
    /// Right singular vectors, `n x r` with orthonormal columns.
    pub v: Array2<f64>,
}

impl SvdResult {
    /// Rebuilds `U diag(d) Vᵀ`.
    pub fn reconstruct(&self) -> Array2<f64> {
        scaled_product(
            &self.u,
            self.singular_values.as_slice().unwrap(),
            &self.v,
            self.singular_values.len(),
        )
    }
}

fn check_input(a: &ArrayView2<'_, f64>) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::EmptyMatrix {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    for ((i, j), &v) in a.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFiniteEntry { row: i, col: j });
        }
    }
    Ok(())
}

fn to_faer(a: &ArrayView2<'_, f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Runs the sequential faer SVD. `with_vectors = false` computes values only.
fn faer_thin_svd(
    a: &ArrayView2<'_, f64>,
    with_vectors: bool,
) -> Result<(Option<Mat<f64>>, faer::diag::Diag<f64>, Option<Mat<f64>>)> {
    let (m, n) = (a.nrows(), a.ncols());
    let size = m.min(n);
    let mat = to_faer(a);
    let mut s = faer::diag::Diag::<f64>::zeros(size);
    let mut u = with_vectors.then(|| Mat::<f64>::zeros(m, size));
    let mut v = with_vectors.then(|| Mat::<f64>::zeros(n, size));
    let compute = if with_vectors {
        ComputeSvdVectors::Thin
    } else {
        ComputeSvdVectors::No
    };
    let par = Par::Seq;
    let params = faer::Spec::default();
    let mut buffer = MemBuffer::new(svd_scratch::<f64>(m, n, compute, compute, par, params));
    faer_svd(
        mat.as_ref(),
        s.as_mut(),
        u.as_mut().map(|u| u.as_mut()),
        v.as_mut().map(|v| v.as_mut()),
        par,
        MemStack::new(&mut buffer),
        params,
    )
    .map_err(|_| Error::SvdNoConvergence { rows: m, cols: n })?;
    Ok((u, s, v))
}

/// Thin SVD with deterministic output.
///
/// Preconditions: finite input, at least one row and one column. Fails with
/// [`Error::SvdNoConvergence`] if the iterative bidiagonal solver exhausts its
/// iteration cap.
pub fn thin_svd(a: ArrayView2<'_, f64>) -> Result<SvdResult> {
    check_input(&a)?;
    let (u, s, v) = faer_thin_svd(&a, true)?;
    let (fu, fv) = (u.unwrap(), v.unwrap());
    let size = s.dim();
    let mut u = Array2::from_shape_fn((a.nrows(), size), |(i, j)| fu[(i, j)]);
    let mut v = Array2::from_shape_fn((a.ncols(), size), |(i, j)| fv[(i, j)]);
    let d = Array1::from_shape_fn(size, |i| s[i]);
    apply_sign_convention(&mut u, &mut v);
    Ok(SvdResult {
        u,
        singular_values: d,
        v,
    })
}

/// Singular values only (no vectors); faster than [`thin_svd`] when the
/// caller needs norms or ranks.
pub fn singular_values(a: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    check_input(&a)?;
    let (_, s, _) = faer_thin_svd(&a, false)?;
    Ok(Array1::from_shape_fn(s.dim(), |i| s[i]))
}

/// Flips the sign of each (u, v) column pair so that the entry of largest
/// magnitude in the u column is nonnegative; ties keep the lowest index.
fn apply_sign_convention(u: &mut Array2<f64>, v: &mut Array2<f64>) {
    for k in 0..u.ncols() {
        let mut best = 0usize;
        let mut best_abs = 0.0f64;
        for (i, &x) in u.column(k).iter().enumerate() {
            let ax = x.abs();
            if ax > best_abs {
                best_abs = ax;
                best = i;
            }
        }
        if u[(best, k)] < 0.0 {
            u.column_mut(k).mapv_inplace(|x| -x);
            v.column_mut(k).mapv_inplace(|x| -x);
        }
    }
}

/// `U[:, :k] diag(d[:k]) V[:, :k]ᵀ` without touching the trailing columns.
fn scaled_product(u: &Array2<f64>, d: &[f64], v: &Array2<f64>, k: usize) -> Array2<f64> {
    if k == 0 {
        return Array2::zeros((u.nrows(), v.nrows()));
    }
    let mut ud = u.slice(ndarray::s![.., ..k]).to_owned();
    for (mut col, &s) in ud.columns_mut().into_iter().zip(d.iter().take(k)) {
        col.mapv_inplace(|x| x * s);
    }
    ud.dot(&v.slice(ndarray::s![.., ..k]).t())
}

/// Soft singular-value thresholding: replaces each singular value `d` by
/// `max(d - lambda, 0)` and rebuilds the matrix.
///
/// Returns the shrunk matrix together with its thresholded SVD. The rank of
/// the result equals the number of singular values strictly above `lambda`.
pub fn soft_threshold_svd(a: ArrayView2<'_, f64>, lambda: f64) -> Result<(Array2<f64>, SvdResult)> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be nonnegative, got {lambda}"
        )));
    }
    let mut svd = thin_svd(a)?;
    svd.singular_values.mapv_inplace(|d| (d - lambda).max(0.0));
    let k = svd.singular_values.iter().take_while(|&&d| d > 0.0).count();
    let z = scaled_product(&svd.u, svd.singular_values.as_slice().unwrap(), &svd.v, k);
    Ok((z, svd))
}

/// Sum of singular values.
pub fn nuclear_norm(a: ArrayView2<'_, f64>) -> Result<f64> {
    Ok(singular_values(a)?.sum())
}

/// Number of singular values above `tol` times the largest one; 0 for the
/// zero matrix.
pub fn numerical_rank(a: ArrayView2<'_, f64>, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rank tolerance must be positive, got {tol}"
        )));
    }
    let d = singular_values(a)?;
    let d1 = d[0];
    Ok(d.iter().filter(|&&x| x > tol * d1).count())
}

/// Frobenius norm.
pub fn frobenius_norm(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn gaussian(m: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((m, n), |_| rng.sample(StandardNormal))
    }

    fn assert_orthonormal_cols(m: &Array2<f64>, tol: f64) {
        let gram = m.t().dot(m);
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (gram[(i, j)] - expect).abs() < tol,
                    "gram[{i},{j}] = {}",
                    gram[(i, j)]
                );
            }
        }
    }

    #[test]
    fn identity_svd() {
        let a = Array2::<f64>::eye(3);
        let svd = thin_svd(a.view()).unwrap();
        assert_abs_diff_eq!(svd.u, Array2::eye(3), epsilon = 1e-12);
        assert_abs_diff_eq!(svd.v, Array2::eye(3), epsilon = 1e-12);
        for &d in &svd.singular_values {
            assert_abs_diff_eq!(d, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn diagonal_svd() {
        let a = array![[3.0, 0.0], [0.0, 1.0]];
        let svd = thin_svd(a.view()).unwrap();
        assert_abs_diff_eq!(svd.singular_values[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(svd.singular_values[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn random_reconstruction() {
        let a = gaussian(5, 3, 42);
        let svd = thin_svd(a.view()).unwrap();
        assert_orthonormal_cols(&svd.u, 1e-10);
        assert_orthonormal_cols(&svd.v, 1e-10);
        let recon = svd.reconstruct();
        let rel = frobenius_norm((&recon - &a).view()) / frobenius_norm(a.view());
        assert!(rel < 1e-10, "relative reconstruction error {rel}");
        // sorted nonincreasing
        for w in svd.singular_values.as_slice().unwrap().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn svd_is_deterministic() {
        let a = gaussian(7, 4, 9);
        let s1 = thin_svd(a.view()).unwrap();
        let s2 = thin_svd(a.view()).unwrap();
        assert_eq!(s1.u, s2.u);
        assert_eq!(s1.v, s2.v);
        assert_eq!(s1.singular_values, s2.singular_values);
    }

    #[test]
    fn rejects_bad_input() {
        let a = Array2::<f64>::zeros((0, 3));
        assert!(matches!(
            thin_svd(a.view()),
            Err(Error::EmptyMatrix { .. })
        ));
        let mut b = Array2::<f64>::zeros((2, 2));
        b[(1, 0)] = f64::NAN;
        assert!(matches!(
            thin_svd(b.view()),
            Err(Error::NonFiniteEntry { row: 1, col: 0 })
        ));
    }

    #[test]
    fn soft_threshold_zero_is_identity() {
        let a = gaussian(6, 4, 3);
        let (z, _) = soft_threshold_svd(a.view(), 0.0).unwrap();
        let rel = frobenius_norm((&z - &a).view()) / frobenius_norm(a.view());
        assert!(rel < 1e-10);
    }

    #[test]
    fn soft_threshold_diagonal() {
        let a = array![[3.0, 0.0], [0.0, 1.0]];
        let (z, svd) = soft_threshold_svd(a.view(), 2.0).unwrap();
        assert_abs_diff_eq!(z, array![[1.0, 0.0], [0.0, 0.0]], epsilon = 1e-12);
        assert_eq!(svd.singular_values.iter().filter(|&&d| d > 0.0).count(), 1);
    }

    #[test]
    fn soft_threshold_above_spectrum_gives_zero() {
        let a = gaussian(10, 10, 17);
        let d1 = singular_values(a.view()).unwrap()[0];
        let (z, _) = soft_threshold_svd(a.view(), d1 + 1.0).unwrap();
        assert_eq!(z, Array2::zeros((10, 10)));
    }

    #[test]
    fn nuclear_norm_examples() {
        assert_abs_diff_eq!(
            nuclear_norm(Array2::<f64>::eye(4).view()).unwrap(),
            4.0,
            epsilon = 1e-12
        );
        let a = array![[3.0, 0.0], [0.0, 1.0]];
        assert_abs_diff_eq!(nuclear_norm(a.view()).unwrap(), 4.0, epsilon = 1e-12);
        // definitional cross-check against the full decomposition
        let b = gaussian(6, 4, 5);
        let via_svd = thin_svd(b.view()).unwrap().singular_values.sum();
        assert_abs_diff_eq!(nuclear_norm(b.view()).unwrap(), via_svd, epsilon = 1e-10);
    }

    #[test]
    fn numerical_rank_examples() {
        assert_eq!(
            numerical_rank(Array2::<f64>::zeros((5, 5)).view(), 1e-8).unwrap(),
            0
        );
        let a = array![[3.0, 0.0], [0.0, 1e-12]];
        assert_eq!(numerical_rank(a.view(), 1e-8).unwrap(), 1);
        // rank of a product of Gaussian factors is the inner dimension
        let f1 = gaussian(20, 4, 11);
        let f2 = gaussian(4, 20, 12);
        let prod = f1.dot(&f2);
        assert_eq!(numerical_rank(prod.view(), 1e-8).unwrap(), 4);
    }

    #[test]
    fn soft_threshold_is_blockwise_minimizer() {
        // the shrunk matrix must beat 100 random perturbations on the
        // penalized objective 0.5 * |A - Z|_F^2 + lambda * |Z|_*
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for trial in 0..5 {
            let m = rng.gen_range(2..=10);
            let n = rng.gen_range(2..=10);
            let a = gaussian(m, n, 200 + trial);
            let lambda = rng.gen_range(0.1..2.0);
            let (z, _) = soft_threshold_svd(a.view(), lambda).unwrap();
            let value = |zz: &Array2<f64>| {
                0.5 * frobenius_norm((&a - zz).view()).powi(2)
                    + lambda * nuclear_norm(zz.view()).unwrap()
            };
            let best = value(&z);
            for _ in 0..100 {
                let mut delta = Array2::from_shape_fn((m, n), |_| {
                    rng.sample::<f64, _>(StandardNormal)
                });
                let norm = frobenius_norm(delta.view());
                let scale = rng.gen_range(0.0..0.1) / norm.max(1e-12);
                delta.mapv_inplace(|x| x * scale);
                let candidate = &z + &delta;
                assert!(value(&candidate) + 1e-12 >= best);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn nuclear_norm_is_convex(seed in 0u64..1000, alpha in 0.0f64..=1.0) {
            let a = gaussian(6, 5, seed);
            let b = gaussian(6, 5, seed.wrapping_add(7777));
            let mix = alpha * &a + (1.0 - alpha) * &b;
            let lhs = nuclear_norm(mix.view()).unwrap();
            let rhs = alpha * nuclear_norm(a.view()).unwrap()
                + (1.0 - alpha) * nuclear_norm(b.view()).unwrap();
            prop_assert!(lhs <= rhs + 1e-9);
        }

        #[test]
        fn soft_threshold_is_nonexpansive(seed in 0u64..1000, lambda in 0.0f64..3.0) {
            let a = gaussian(7, 5, seed);
            let b = gaussian(7, 5, seed.wrapping_add(31));
            let (za, _) = soft_threshold_svd(a.view(), lambda).unwrap();
            let (zb, _) = soft_threshold_svd(b.view(), lambda).unwrap();
            let lhs = frobenius_norm((&za - &zb).view());
            let rhs = frobenius_norm((&a - &b).view());
            prop_assert!(lhs <= rhs + 1e-9);
        }

        #[test]
        fn reconstruction_matches_input(m in 1usize..12, n in 1usize..12, seed in 0u64..1000) {
            let a = gaussian(m, n, seed);
            let svd = thin_svd(a.view()).unwrap();
            let recon = svd.reconstruct();
            let denom = frobenius_norm(a.view()).max(1e-300);
            prop_assert!(frobenius_norm((&recon - &a).view()) / denom < 1e-8);
        }
    }
}
