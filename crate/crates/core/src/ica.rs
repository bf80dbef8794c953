//! PCA whitening and the symmetric fixed-point ICA solver with a log-cosh
//! contrast.
//!
//! Data matrices are laid out variables × samples (`F × T`). The solver
//! works in whitened coordinates: it receives `Z = K·(X - mean)` with
//! identity sample covariance and returns an unmixing matrix with
//! orthonormal rows, so that `S = W·Z`.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Default convergence tolerance on `max |1 - |<w_new, w_old>||`.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 4000;

/// Singular values below this fraction of the largest are treated as zero.
const RANK_RTOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IcaError {
    #[error("data has fewer than {requested} non-zero singular values (found {found})")]
    RankDeficient { requested: usize, found: usize },
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("row {0} of the input has zero variance")]
    DegenerateInput(usize),
    #[error("non-finite value in input")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, IcaError>;

/// Output of [`pca_whiten`].
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningResult {
    /// `R × T`, identity sample covariance.
    pub whitened: DMatrix<f64>,
    /// `R × F` whitening transform applied to centered data.
    pub forward: DMatrix<f64>,
    /// `F × R` dewhitening transform.
    pub inverse: DMatrix<f64>,
    /// Row means of the input (length `F`).
    pub mean: DVector<f64>,
    /// Fraction of total variance captured by each retained direction.
    pub explained_variance: Vec<f64>,
}

impl WhiteningResult {
    pub fn rank(&self) -> usize {
        self.forward.nrows()
    }

    /// Whiten new data with the stored mean and transform.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = x.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean;
        }
        &self.forward * centered
    }
}

/// Principal axes of mean-centered data, sorted by decreasing singular value.
#[derive(Debug, Clone)]
pub(crate) struct CenteredSvd {
    pub mean: DVector<f64>,
    pub centered: DMatrix<f64>,
    /// `F × min(F,T)` left singular vectors, sign-normalized so the
    /// largest-magnitude entry of each column is positive.
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
}

pub(crate) fn centered_svd(x: &DMatrix<f64>) -> Result<CenteredSvd> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(IcaError::NonFinite);
    }
    let mean = x.column_mean();
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let svd = SVD::new(centered.clone(), true, false);
    let u_raw = svd.u.expect("left singular vectors were requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let mut u = DMatrix::zeros(x.nrows(), order.len());
    let mut sigma = Vec::with_capacity(order.len());
    for (dst, &src) in order.iter().enumerate() {
        let mut col = u_raw.column(src).into_owned();
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            col.neg_mut();
        }
        u.set_column(dst, &col);
        sigma.push(svd.singular_values[src]);
    }
    Ok(CenteredSvd {
        mean,
        centered,
        u,
        sigma,
    })
}

fn numerical_rank(sigma: &[f64]) -> usize {
    let top = sigma.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    sigma.iter().filter(|s| **s > top * RANK_RTOL).count()
}

/// Center rows, keep the top `rank` principal directions and rescale them to
/// unit sample variance (denominator `T - 1`).
pub fn pca_whiten(x: &DMatrix<f64>, rank: usize) -> Result<WhiteningResult> {
    let (f, t) = x.shape();
    if t < 2 {
        return Err(IcaError::InvalidDimensions(format!("need at least 2 samples, got {t}")));
    }
    if rank == 0 || rank > f.min(t - 1) {
        return Err(IcaError::InvalidDimensions(format!(
            "rank {rank} not in 1..={} for a {f}x{t} matrix",
            f.min(t - 1)
        )));
    }
    let svd = centered_svd(x)?;
    let found = numerical_rank(&svd.sigma);
    if found < rank {
        return Err(IcaError::RankDeficient { requested: rank, found });
    }
    let scale = ((t - 1) as f64).sqrt();
    let total: f64 = svd.sigma.iter().map(|s| s * s).sum();
    let mut forward = DMatrix::zeros(rank, f);
    let mut inverse = DMatrix::zeros(f, rank);
    for r in 0..rank {
        let u = svd.u.column(r);
        let s = svd.sigma[r];
        forward.set_row(r, &(u.transpose() * (scale / s)));
        inverse.set_column(r, &(u * (s / scale)));
    }
    let whitened = &forward * &svd.centered;
    Ok(WhiteningResult {
        whitened,
        forward,
        inverse,
        mean: svd.mean,
        explained_variance: svd.sigma[..rank].iter().map(|s| s * s / total).collect(),
    })
}

/// Plain PCA projection (no rescaling), used for low-dimensional embeddings.
#[derive(Debug, Clone)]
pub struct PcaProjection {
    /// `dims × F` principal axes.
    pub components: DMatrix<f64>,
    /// `dims × T` coordinates of each sample.
    pub scores: DMatrix<f64>,
    pub mean: DVector<f64>,
    /// Fraction of variance captured by each retained axis.
    pub explained_variance: Vec<f64>,
}

pub fn pca_project(x: &DMatrix<f64>, dims: usize) -> Result<PcaProjection> {
    let (f, t) = x.shape();
    if t < 2 || dims == 0 || dims > f {
        return Err(IcaError::InvalidDimensions(format!(
            "cannot project {f}x{t} data onto {dims} axes"
        )));
    }
    let svd = centered_svd(x)?;
    let found = numerical_rank(&svd.sigma);
    if found < dims {
        return Err(IcaError::RankDeficient { requested: dims, found });
    }
    let components = svd.u.columns(0, dims).transpose();
    let scores = &components * &svd.centered;
    let total: f64 = svd.sigma.iter().map(|s| s * s).sum();
    Ok(PcaProjection {
        components,
        scores,
        mean: svd.mean,
        explained_variance: svd.sigma[..dims].iter().map(|s| s * s / total).collect(),
    })
}

/// `(G, g, g')` for `G(u) = ln cosh u`, evaluated without overflow.
pub fn contrast_logcosh(u: f64) -> (f64, f64, f64) {
    let a = u.abs();
    let big_g = a + ((1.0 + (-2.0 * a).exp()) / 2.0).ln();
    let g = u.tanh();
    (big_g, g, 1.0 - g * g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnmixingMatrix {
    /// `K × R`, orthonormal rows in whitened space.
    pub rows: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub seed: u64,
}

impl UnmixingMatrix {
    pub fn sources(&self, whitened: &DMatrix<f64>) -> DMatrix<f64> {
        &self.rows * whitened
    }
}

/// `W <- (W Wᵀ)^{-1/2} W`.
pub fn symmetric_orthogonalize(w: &DMatrix<f64>) -> DMatrix<f64> {
    let gram = w * w.transpose();
    let eig = SymmetricEigen::new(gram);
    let inv_sqrt = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| 1.0 / l.max(f64::MIN_POSITIVE).sqrt()),
    );
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * inv_sqrt[j]);
    scaled * v.transpose() * w
}

fn random_init(k: usize, r: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Row-major fill keeps the draw order independent of storage layout.
    let draws: Vec<f64> = (0..k * r).map(|_| StandardNormal.sample(&mut rng)).collect();
    DMatrix::from_row_slice(k, r, &draws)
}

/// Symmetric FastICA with the log-cosh contrast.
///
/// Each iteration applies `w <- E[z g(wᵀz)] - E[g'(wᵀz)] w` to every row and
/// then orthonormalizes the rows jointly. Stops once
/// `max_i |1 - |<w_new_i, w_old_i>|| < tol`; otherwise returns with
/// `converged = false` after `max_iter` iterations.
pub fn ica_fixed_point(z: &DMatrix<f64>, k: usize, tol: f64, max_iter: usize, seed: u64) -> Result<UnmixingMatrix> {
    let (r, t) = z.shape();
    if k == 0 || k > r {
        return Err(IcaError::InvalidDimensions(format!(
            "cannot extract {k} components from {r} whitened rows"
        )));
    }
    if max_iter == 0 || t < 2 {
        return Err(IcaError::InvalidDimensions(format!("max_iter={max_iter}, samples={t}")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(IcaError::NonFinite);
    }
    for (i, row) in z.row_iter().enumerate() {
        let m = row.mean();
        if row.iter().all(|v| (v - m).abs() <= f64::EPSILON * m.abs().max(1.0)) {
            return Err(IcaError::DegenerateInput(i));
        }
    }

    let zt = z.transpose();
    let inv_t = 1.0 / t as f64;
    let mut w = symmetric_orthogonalize(&random_init(k, r, seed));
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut g = &w * z;
        let mut gp_mean = vec![0.0; k];
        for (i, mut row) in g.row_iter_mut().enumerate() {
            let mut acc = 0.0;
            for v in row.iter_mut() {
                let th = v.tanh();
                *v = th;
                acc += 1.0 - th * th;
            }
            gp_mean[i] = acc * inv_t;
        }
        let mut next = (g * &zt) * inv_t;
        for i in 0..k {
            for j in 0..r {
                next[(i, j)] -= gp_mean[i] * w[(i, j)];
            }
        }
        let next = symmetric_orthogonalize(&next);
        let lim = next
            .row_iter()
            .zip(w.row_iter())
            .map(|(a, b)| (1.0 - a.dot(&b).abs()).abs())
            .fold(0.0f64, f64::max);
        w = next;
        if lim < tol {
            converged = true;
            break;
        }
    }
    Ok(UnmixingMatrix {
        rows: w,
        converged,
        iterations,
        seed,
    })
}

/// Sample covariance (`1/(T-1)`) of the rows of `x`.
pub fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let t = x.ncols();
    let mean = x.column_mean();
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        col -= &mean;
    }
    (&c * c.transpose()) / (t as f64 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn max_abs_dev_from_identity(m: &DMatrix<f64>) -> f64 {
        let n = m.nrows();
        (m - DMatrix::<f64>::identity(n, n)).amax()
    }

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn logcosh_values() {
        assert_eq!(contrast_logcosh(0.0), (0.0, 0.0, 1.0));
        let (_, g, _) = contrast_logcosh(1.0);
        assert_abs_diff_eq!(g, 0.761594, epsilon = 1e-6);
        let (big, g, gp) = contrast_logcosh(50.0);
        assert_abs_diff_eq!(big, 50.0 - 2f64.ln(), epsilon = 1e-12);
        assert!(big.is_finite() && g.is_finite() && gp.is_finite());
        let (big, _, _) = contrast_logcosh(-800.0);
        assert_abs_diff_eq!(big, 800.0 - 2f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn whitening_rank_deficient() {
        let base = gaussian(1, 50, 1);
        let x = DMatrix::from_fn(2, 50, |i, j| base[(0, j)] * (i as f64 + 1.0));
        assert!(matches!(
            pca_whiten(&x, 2),
            Err(IcaError::RankDeficient { requested: 2, found: 1 })
        ));
    }

    #[test]
    fn whitening_random_gaussian() {
        let x = gaussian(5, 200, 7);
        let wr = pca_whiten(&x, 3).unwrap();
        assert!(max_abs_dev_from_identity(&sample_covariance(&wr.whitened)) < 1e-8);
        assert!(max_abs_dev_from_identity(&(&wr.forward * &wr.inverse)) < 1e-10);
        let ev = &wr.explained_variance;
        assert!(ev[0] >= ev[1] && ev[1] >= ev[2]);
    }

    #[test]
    fn whitening_already_white_data() {
        // Exactly white data: whiten once, then whiten the result again.
        let once = pca_whiten(&gaussian(4, 300, 3), 4).unwrap().whitened;
        let twice = pca_whiten(&once, 4).unwrap();
        assert!(max_abs_dev_from_identity(&sample_covariance(&twice.whitened)) < 1e-8);
        assert!(twice.explained_variance.iter().all(|v| (v - 0.25).abs() < 1e-10));
    }

    #[test]
    fn whitening_scale_invariant() {
        let x = gaussian(4, 100, 11);
        let a = pca_whiten(&x, 3).unwrap();
        let b = pca_whiten(&(&x * 37.5), 3).unwrap();
        assert!((&a.whitened - &b.whitened).amax() < 1e-9);
    }

    #[test]
    fn solver_rejects_bad_input() {
        let mut z = gaussian(3, 100, 2);
        assert!(matches!(
            ica_fixed_point(&z, 4, 1e-6, 10, 0),
            Err(IcaError::InvalidDimensions(_))
        ));
        z.row_mut(1).fill(0.5);
        assert_eq!(ica_fixed_point(&z, 2, 1e-6, 10, 0), Err(IcaError::DegenerateInput(1)));
    }

    #[test]
    fn solver_is_deterministic_and_orthonormal() {
        let z = pca_whiten(&gaussian(4, 500, 5), 4).unwrap().whitened;
        let a = ica_fixed_point(&z, 3, 1e-6, 50, 9).unwrap();
        let b = ica_fixed_point(&z, 3, 1e-6, 50, 9).unwrap();
        assert_eq!(a, b);
        let gram = &a.rows * a.rows.transpose();
        assert!(max_abs_dev_from_identity(&gram) < 1e-6);
    }

    #[test]
    fn gaussian_noise_reports_instead_of_failing() {
        let z = pca_whiten(&gaussian(3, 2000, 17), 3).unwrap().whitened;
        let res = ica_fixed_point(&z, 3, 1e-12, 5, 1).unwrap();
        assert_eq!(res.iterations, 5);
        assert!(!res.converged);
    }
}
