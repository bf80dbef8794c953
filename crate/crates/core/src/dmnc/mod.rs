//! Dynamic Market Network Connectivity: sliding-window correlation tensors
//! over module (or node) activations, plus similarity and anomaly signals.

mod graph;
mod regimes;

pub use graph::{detect_communities, global_efficiency, modularity, EdgeWeighting};
pub use regimes::{cluster_regimes, pca_embed, Embedding, RegimeLabeling};

use std::ops::Range;

use chrono::NaiveDate;
use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::group_ica::ActivationMatrix;
use crate::ica::IcaError;
use crate::stats;

pub const DEFAULT_DELTA: usize = 45;
pub const DEFAULT_REGIMES: usize = 4;
/// Shrinkage added to the baseline covariance, relative to its mean variance.
pub const SHRINKAGE: f64 = 1e-3;
const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DmncError {
    #[error("window {delta} longer than series of length {len}")]
    WindowTooLong { delta: usize, len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("row {0} is constant")]
    DegenerateRow(usize),
    #[error("matrix is asymmetric by {0}")]
    AsymmetricInput(f64),
    #[error("zero vector")]
    ZeroVector,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("regularized baseline covariance is singular")]
    SingularCovariance,
    #[error("graph has no positive edges")]
    NoPositiveEdges,
    #[error("k = {k} exceeds the {n} available vectors")]
    KTooLarge { k: usize, n: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error(transparent)]
    Ica(#[from] IcaError),
}

pub type Result<T> = std::result::Result<T, DmncError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowFn {
    Rect,
    /// Gaussian taper centred on the window midpoint with this σ in samples.
    Gaussian(f64),
}

impl WindowFn {
    /// Accepts `rect` or `gaussian(<sigma>)`, case-insensitively.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "rect" {
            return Some(WindowFn::Rect);
        }
        let sigma: f64 = s.strip_prefix("gaussian(")?.strip_suffix(')')?.trim().parse().ok()?;
        (sigma > 0.0 && sigma.is_finite()).then_some(WindowFn::Gaussian(sigma))
    }

    pub fn label(&self) -> String {
        match self {
            WindowFn::Rect => "RECT".to_string(),
            WindowFn::Gaussian(s) => format!("GAUSSIAN({s})"),
        }
    }

    /// Per-sample weights, or `None` for the rectangular window.
    pub fn weights(&self, delta: usize) -> Option<Vec<f64>> {
        match *self {
            WindowFn::Rect => None,
            WindowFn::Gaussian(sigma) => {
                let mu = (delta as f64 - 1.0) / 2.0;
                Some(
                    (0..delta)
                        .map(|s| {
                            let d = s as f64 - mu;
                            (-d * d / (2.0 * sigma * sigma)).exp()
                        })
                        .collect(),
                )
            }
        }
    }
}

/// Correlation matrix of one window. Entries touching a constant row are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowCorrelation {
    pub matrix: DMatrix<f64>,
    pub zero_variance_rows: Vec<usize>,
}

impl WindowCorrelation {
    pub fn is_complete(&self) -> bool {
        self.zero_variance_rows.is_empty()
    }
}

/// (Weighted) Pearson correlation between the rows of a `K × Δ` slice.
pub fn window_correlation(slice: &DMatrix<f64>, weights: Option<&[f64]>) -> Result<WindowCorrelation> {
    let (k, delta) = slice.shape();
    if delta < 3 {
        return Err(DmncError::InvalidParameter(format!(
            "window of {delta} samples, need at least 3"
        )));
    }
    if let Some(w) = weights {
        if w.len() != delta {
            return Err(DmncError::ShapeMismatch(format!(
                "{} weights for {delta} samples",
                w.len()
            )));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(DmncError::InvalidParameter(
                "weights must be non-negative with positive sum".into(),
            ));
        }
    }
    if slice.iter().any(|v| !v.is_finite()) {
        return Err(DmncError::NonFinite);
    }
    let total: f64 = weights.map_or(delta as f64, |w| w.iter().sum());
    let weight = |s: usize| weights.map_or(1.0, |w| w[s]);

    let mut centered = DMatrix::zeros(k, delta);
    let mut zero_variance_rows = Vec::new();
    let mut var = vec![0.0; k];
    for i in 0..k {
        let row: Vec<f64> = slice.row(i).iter().copied().collect();
        let mean = (0..delta).map(|s| weight(s) * row[s]).sum::<f64>() / total;
        for s in 0..delta {
            centered[(i, s)] = row[s] - mean;
        }
        var[i] = (0..delta).map(|s| weight(s) * centered[(i, s)].powi(2)).sum();
        if stats::is_constant(&row) || var[i] <= 0.0 {
            zero_variance_rows.push(i);
        }
    }

    let mut matrix = DMatrix::identity(k, k);
    for i in 0..k {
        for j in i + 1..k {
            let c = if zero_variance_rows.contains(&i) || zero_variance_rows.contains(&j) {
                f64::NAN
            } else {
                let cov: f64 = (0..delta)
                    .map(|s| weight(s) * centered[(i, s)] * centered[(j, s)])
                    .sum();
                (cov / (var[i].sqrt() * var[j].sqrt())).clamp(-1.0, 1.0)
            };
            matrix[(i, j)] = c;
            matrix[(j, i)] = c;
        }
    }
    Ok(WindowCorrelation {
        matrix,
        zero_variance_rows,
    })
}

/// Ordered sequence of window correlation matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DmncTensor {
    pub matrices: Vec<DMatrix<f64>>,
    /// Date of the last sample in each window.
    pub timestamps: Vec<NaiveDate>,
    /// First column of each window in the input matrix.
    pub start_indices: Vec<usize>,
    /// Constant rows per window; their entries are NaN.
    pub zero_variance_rows: Vec<Vec<usize>>,
    pub labels: Vec<String>,
    pub delta: usize,
    pub stride: usize,
    pub window_fn: WindowFn,
}

impl DmncTensor {
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn k(&self) -> usize {
        self.matrices.first().map_or(0, |m| m.nrows())
    }

    pub fn vectors(&self) -> Result<Vec<ConnectivityVector>> {
        self.matrices.iter().map(vectorize_upper).collect()
    }

    fn all_finite(&self) -> Result<()> {
        if self.matrices.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(DmncError::NonFinite);
        }
        Ok(())
    }
}

/// Slide a window of `delta` samples with the given stride over the columns
/// of `a`. Windows are built in parallel and collected in order.
pub fn build_dmnc(a: &ActivationMatrix, delta: usize, stride: usize, window_fn: WindowFn) -> Result<DmncTensor> {
    let t = a.len();
    if a.dates.len() != t {
        return Err(DmncError::ShapeMismatch(format!(
            "{} dates for {t} samples",
            a.dates.len()
        )));
    }
    if stride == 0 {
        return Err(DmncError::InvalidParameter("stride must be positive".into()));
    }
    if delta < 3 {
        return Err(DmncError::InvalidParameter(format!("delta = {delta}, need at least 3")));
    }
    if delta > t {
        return Err(DmncError::WindowTooLong { delta, len: t });
    }
    let weights = window_fn.weights(delta);
    let starts: Vec<usize> = (0..=t - delta).step_by(stride).collect();
    let windows: Vec<WindowCorrelation> = starts
        .par_iter()
        .map(|&s| window_correlation(&a.values.columns(s, delta).into_owned(), weights.as_deref()))
        .collect::<Result<_>>()?;
    let (matrices, zero_variance_rows) = windows.into_iter().map(|w| (w.matrix, w.zero_variance_rows)).unzip();
    Ok(DmncTensor {
        matrices,
        timestamps: starts.iter().map(|&s| a.dates[s + delta - 1]).collect(),
        start_indices: starts,
        zero_variance_rows,
        labels: a.labels.clone(),
        delta,
        stride,
        window_fn,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothing {
    /// Trailing mean over `n` samples (shorter at the start).
    MovingAvg(usize),
    /// `s[t] = α x[t] + (1 - α) s[t-1]`, seeded with the first value.
    Exp(f64),
    /// Per-row standardization with the sample standard deviation.
    ZScore,
}

impl Smoothing {
    /// Accepts `none`, `ma(<n>)`, `exp(<alpha>)` or `zscore`.
    pub fn parse(s: &str) -> Option<Option<Self>> {
        let s = s.trim().to_ascii_lowercase();
        if s == "none" {
            return Some(None);
        }
        if s == "zscore" {
            return Some(Some(Smoothing::ZScore));
        }
        if let Some(n) = s.strip_prefix("ma(").and_then(|r| r.strip_suffix(')')) {
            return n.trim().parse().ok().map(|n| Some(Smoothing::MovingAvg(n)));
        }
        let a = s.strip_prefix("exp(")?.strip_suffix(')')?;
        a.trim().parse().ok().map(|a| Some(Smoothing::Exp(a)))
    }
}

pub fn smooth_activations(a: &ActivationMatrix, method: Smoothing) -> Result<ActivationMatrix> {
    match method {
        Smoothing::MovingAvg(0) => return Err(DmncError::InvalidParameter("moving average needs n >= 1".into())),
        Smoothing::Exp(alpha) if !(alpha > 0.0 && alpha <= 1.0) => {
            return Err(DmncError::InvalidParameter(format!("alpha = {alpha} outside (0, 1]")))
        }
        _ => {}
    }
    let (k, t) = a.values.shape();
    let mut out = DMatrix::zeros(k, t);
    for i in 0..k {
        let row: Vec<f64> = a.values.row(i).iter().copied().collect();
        let smoothed: Vec<f64> = match method {
            Smoothing::MovingAvg(1) => row,
            Smoothing::MovingAvg(n) => (0..t).map(|s| stats::mean(&row[s.saturating_sub(n - 1)..=s])).collect(),
            Smoothing::Exp(alpha) => {
                let mut prev = row.first().copied().unwrap_or(0.0);
                row.iter()
                    .map(|x| {
                        prev = alpha * x + (1.0 - alpha) * prev;
                        prev
                    })
                    .collect()
            }
            Smoothing::ZScore => {
                if t < 2 || stats::is_constant(&row) {
                    return Err(DmncError::DegenerateRow(i));
                }
                let m = stats::mean(&row);
                let sd = stats::variance(&row, 1).sqrt();
                row.iter().map(|x| (x - m) / sd).collect()
            }
        };
        for (s, v) in smoothed.into_iter().enumerate() {
            out[(i, s)] = v;
        }
    }
    Ok(ActivationMatrix {
        values: out,
        labels: a.labels.clone(),
        dates: a.dates.clone(),
    })
}

/// Samples ordered by factor coordinates instead of time.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedWindowIndex {
    pub order: Vec<usize>,
    pub keys: Vec<(f64, f64)>,
}

/// Stable ascending sort by `z_on`, then `z_off`, then original index.
pub fn order_windows(coords: &[(f64, f64)]) -> Result<OrderedWindowIndex> {
    if coords.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(DmncError::NonFinite);
    }
    let mut order: Vec<usize> = (0..coords.len()).collect();
    order.sort_by(|&i, &j| {
        coords[i]
            .0
            .total_cmp(&coords[j].0)
            .then(coords[i].1.total_cmp(&coords[j].1))
    });
    Ok(OrderedWindowIndex {
        order,
        keys: coords.to_vec(),
    })
}

/// dMNC over samples re-sequenced by factor coordinates. The timestamp of a
/// window is the date of its last (re-sequenced) sample.
pub fn build_ordered_dmnc(
    a: &ActivationMatrix,
    coords: &[(f64, f64)],
    delta: usize,
    stride: usize,
    window_fn: WindowFn,
) -> Result<(DmncTensor, OrderedWindowIndex)> {
    if coords.len() != a.len() {
        return Err(DmncError::ShapeMismatch(format!(
            "{} coordinates for {} samples",
            coords.len(),
            a.len()
        )));
    }
    let index = order_windows(coords)?;
    let values = a.values.select_columns(&index.order);
    let dates = index.order.iter().map(|&i| a.dates[i]).collect();
    let reordered = ActivationMatrix {
        values,
        labels: a.labels.clone(),
        dates,
    };
    Ok((build_dmnc(&reordered, delta, stride, window_fn)?, index))
}

/// Upper triangle of a `K × K` matrix, row-major over `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityVector {
    pub values: Vec<f64>,
    pub k: usize,
}

impl ConnectivityVector {
    pub fn pairs(k: usize) -> Vec<(usize, usize)> {
        (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect()
    }
}

pub fn vectorize_upper(c: &DMatrix<f64>) -> Result<ConnectivityVector> {
    let k = c.nrows();
    if c.ncols() != k {
        return Err(DmncError::ShapeMismatch(format!("{}x{} is not square", k, c.ncols())));
    }
    let mut values = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for (i, j) in ConnectivityVector::pairs(k) {
        let (a, b) = (c[(i, j)], c[(j, i)]);
        let gap = (a - b).abs();
        if gap > SYMMETRY_TOL {
            return Err(DmncError::AsymmetricInput(gap));
        }
        values.push(a);
    }
    Ok(ConnectivityVector { values, k })
}

pub fn devectorize(v: &ConnectivityVector) -> Result<DMatrix<f64>> {
    let k = v.k;
    if v.values.len() != k * k.saturating_sub(1) / 2 {
        return Err(DmncError::ShapeMismatch(format!(
            "{} values for K = {k}",
            v.values.len()
        )));
    }
    let mut c = DMatrix::identity(k, k);
    for ((i, j), x) in ConnectivityVector::pairs(k).into_iter().zip(&v.values) {
        c[(i, j)] = *x;
        c[(j, i)] = *x;
    }
    Ok(c)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(DmncError::ShapeMismatch(format!("lengths {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(DmncError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(DmncError::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok((a - b).norm())
}

/// `1 - cos(v_t, v_{t-1})`, aligned with the tensor: entry 0 is `None`, as
/// is any step involving a zero vector.
pub fn similarity_jump(tensor: &DmncTensor) -> Result<Vec<Option<f64>>> {
    if tensor.len() < 2 {
        return Err(DmncError::InsufficientData {
            needed: 2,
            got: tensor.len(),
        });
    }
    tensor.all_finite()?;
    let v = tensor.vectors()?;
    let mut out = vec![None];
    for t in 1..v.len() {
        out.push(if v[t] == v[t - 1] && v[t].values.iter().any(|x| *x != 0.0) {
            Some(0.0)
        } else {
            cosine_similarity(&v[t].values, &v[t - 1].values).ok().map(|c| 1.0 - c)
        });
    }
    Ok(out)
}

/// Mahalanobis distance of each vector from the baseline mean, using the
/// baseline sample covariance plus `λI` with `λ = 1e-3 · trace / dim`.
pub fn mahalanobis_to_baseline(vectors: &[Vec<f64>], baseline: Range<usize>) -> Result<Vec<f64>> {
    let dim = vectors.first().map_or(0, Vec::len);
    if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
        return Err(DmncError::ShapeMismatch("empty or ragged vectors".into()));
    }
    if baseline.end > vectors.len() || baseline.start >= baseline.end {
        return Err(DmncError::InvalidParameter(format!(
            "baseline {baseline:?} outside {} vectors",
            vectors.len()
        )));
    }
    let n = baseline.len();
    if n < dim + 2 {
        return Err(DmncError::InsufficientData {
            needed: dim + 2,
            got: n,
        });
    }
    let base = DMatrix::from_fn(dim, n, |d, s| vectors[baseline.start + s][d]);
    let mean: DVector<f64> = base.column_mean();
    let cov = crate::ica::sample_covariance(&base);
    let lambda = SHRINKAGE * cov.trace() / dim as f64;
    let reg = &cov + DMatrix::identity(dim, dim) * lambda;
    let chol = Cholesky::new(reg).ok_or(DmncError::SingularCovariance)?;
    Ok(vectors
        .iter()
        .map(|v| {
            let diff = DVector::from_column_slice(v) - &mean;
            diff.dot(&chol.solve(&diff)).max(0.0).sqrt()
        })
        .collect())
}

pub fn distance_to_baseline(tensor: &DmncTensor, baseline: Range<usize>) -> Result<Vec<f64>> {
    tensor.all_finite()?;
    let v: Vec<Vec<f64>> = tensor.vectors()?.into_iter().map(|v| v.values).collect();
    mahalanobis_to_baseline(&v, baseline)
}

/// `S(t) = (1/K²) Σ_ij Var(C[i,j])` over the trailing `tau` matrices, with
/// population variance. Entries before the first full window are `None`.
pub fn structural_volatility(tensor: &DmncTensor, tau: usize) -> Result<Vec<Option<f64>>> {
    if tau < 2 {
        return Err(DmncError::InvalidParameter(format!("tau = {tau}, need at least 2")));
    }
    if tau > tensor.len() {
        return Err(DmncError::WindowTooLong {
            delta: tau,
            len: tensor.len(),
        });
    }
    tensor.all_finite()?;
    let k = tensor.k();
    Ok((0..tensor.len())
        .map(|t| {
            if t + 1 < tau {
                return None;
            }
            let window = &tensor.matrices[t + 1 - tau..=t];
            let mut total = 0.0;
            for i in 0..k {
                for j in 0..k {
                    let series: Vec<f64> = window.iter().map(|m| m[(i, j)]).collect();
                    total += stats::variance(&series, 0);
                }
            }
            Some(total / (k * k) as f64)
        })
        .collect())
}

/// Standardized series with the sample standard deviation; `None` when constant.
pub fn zscore_series(xs: &[f64]) -> Option<Vec<f64>> {
    if xs.len() < 2 || stats::is_constant(xs) {
        return None;
    }
    let m = stats::mean(xs);
    let sd = stats::variance(xs, 1).sqrt();
    Some(xs.iter().map(|x| (x - m) / sd).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeZScores {
    pub pairs: Vec<(usize, usize)>,
    /// One series per pair; `None` for edges that never change.
    pub z: Vec<Option<Vec<f64>>>,
}

pub fn edge_zscores(tensor: &DmncTensor) -> Result<EdgeZScores> {
    if tensor.len() < 3 {
        return Err(DmncError::InsufficientData {
            needed: 3,
            got: tensor.len(),
        });
    }
    tensor.all_finite()?;
    let pairs = ConnectivityVector::pairs(tensor.k());
    let z = pairs
        .iter()
        .map(|&(i, j)| {
            let series: Vec<f64> = tensor.matrices.iter().map(|m| m[(i, j)]).collect();
            zscore_series(&series)
        })
        .collect();
    Ok(EdgeZScores { pairs, z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::business_days;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(k: usize, t: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(k, t, |_, _| rng.random_range(-1.0..1.0))
    }

    fn activations(values: DMatrix<f64>) -> ActivationMatrix {
        let t = values.ncols();
        ActivationMatrix::new(values, business_days(NaiveDate::from_ymd_opt(2001, 1, 1).unwrap(), t))
    }

    fn tensor_of(matrices: Vec<DMatrix<f64>>) -> DmncTensor {
        let n = matrices.len();
        let k = matrices[0].nrows();
        DmncTensor {
            matrices,
            timestamps: business_days(NaiveDate::from_ymd_opt(2001, 1, 1).unwrap(), n),
            start_indices: (0..n).collect(),
            zero_variance_rows: vec![Vec::new(); n],
            labels: crate::group_ica::default_labels(k),
            delta: 3,
            stride: 1,
            window_fn: WindowFn::Rect,
        }
    }

    #[test]
    fn window_fn_parsing() {
        assert_eq!(WindowFn::parse("RECT"), Some(WindowFn::Rect));
        assert_eq!(WindowFn::parse("gaussian(7.5)"), Some(WindowFn::Gaussian(7.5)));
        assert_eq!(WindowFn::parse("gaussian(-1)"), None);
        let w = WindowFn::Gaussian(2.0).weights(5).unwrap();
        assert_eq!(w[2], 1.0);
        assert_eq!(w[0], w[4]);
    }

    #[test]
    fn identical_and_negated_rows() {
        let row = [1.0, 3.0, 2.0, 5.0, 4.0];
        let mut m = DMatrix::zeros(3, 5);
        for s in 0..5 {
            m[(0, s)] = row[s];
            m[(1, s)] = row[s];
            m[(2, s)] = -row[s];
        }
        let c = window_correlation(&m, None).unwrap().matrix;
        assert!((c[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((c[(0, 2)] + 1.0).abs() < 1e-15);
        assert_eq!(c[(2, 2)], 1.0);
    }

    #[test]
    fn matches_textbook_formula() {
        let m = random(4, 30, 1);
        let c = window_correlation(&m, None).unwrap().matrix;
        for i in 0..4 {
            for j in 0..4 {
                let x: Vec<f64> = m.row(i).iter().copied().collect();
                let y: Vec<f64> = m.row(j).iter().copied().collect();
                let (mx, my) = (stats::mean(&x), stats::mean(&y));
                let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / 29.0;
                let expected = cov / (stats::variance(&x, 1).sqrt() * stats::variance(&y, 1).sqrt());
                assert!((c[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_row_is_flagged() {
        let mut m = random(3, 10, 2);
        m.row_mut(1).fill(0.4);
        let w = window_correlation(&m, None).unwrap();
        assert_eq!(w.zero_variance_rows, vec![1]);
        assert!(w.matrix[(0, 1)].is_nan() && w.matrix[(1, 2)].is_nan());
        assert_eq!(w.matrix[(1, 1)], 1.0);
        assert!(w.matrix[(0, 2)].is_finite());
        assert!(window_correlation(&random(2, 2, 3), None).is_err());
    }

    #[test]
    fn uniform_weights_equal_rect() {
        let m = random(3, 12, 4);
        let a = window_correlation(&m, None).unwrap().matrix;
        let b = window_correlation(&m, Some(&[2.0; 12])).unwrap().matrix;
        assert!((a - b).amax() < 1e-14);
    }

    #[test]
    fn tensor_shapes() {
        let a = activations(random(3, 10, 5));
        assert_eq!(build_dmnc(&a, 10, 1, WindowFn::Rect).unwrap().len(), 1);
        let t = build_dmnc(&a, 4, 1, WindowFn::Rect).unwrap();
        assert_eq!(t.len(), 7);
        assert_eq!(t.timestamps[0], a.dates[3]);
        assert_eq!(
            build_dmnc(&a, 4, 3, WindowFn::Rect).unwrap().start_indices,
            vec![0, 3, 6]
        );
        assert_eq!(
            build_dmnc(&a, 11, 1, WindowFn::Rect),
            Err(DmncError::WindowTooLong { delta: 11, len: 10 })
        );
    }

    #[test]
    fn two_phase_correlation_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = 200;
        let mut m = DMatrix::zeros(2, t);
        for s in 0..t {
            let x: f64 = rng.random_range(-1.0..1.0);
            let e: f64 = rng.random_range(-0.1..0.1);
            m[(0, s)] = x;
            m[(1, s)] = if s < t / 2 { x + e } else { -x + e };
        }
        let tensor = build_dmnc(&activations(m), 30, 1, WindowFn::Gaussian(8.0)).unwrap();
        assert!(tensor.matrices[0][(0, 1)] > 0.9);
        assert!(tensor.matrices.last().unwrap()[(0, 1)] < -0.9);
    }

    #[test]
    fn stationary_pair_gives_identical_matrices() {
        let base = [0.3, -1.0, 2.0, 0.5];
        let m = DMatrix::from_fn(2, 40, |i, s| if i == 0 { base[s % 4] } else { 2.0 * base[s % 4] + 1.0 });
        let t = build_dmnc(&activations(m), 8, 1, WindowFn::Rect).unwrap();
        assert!(t.matrices.iter().all(|c| (c - &t.matrices[0]).amax() < 1e-12));
    }

    #[test]
    fn smoothing_examples() {
        let a = activations(random(2, 20, 7));
        assert_eq!(smooth_activations(&a, Smoothing::MovingAvg(1)).unwrap(), a);
        assert_eq!(smooth_activations(&a, Smoothing::Exp(1.0)).unwrap(), a);
        let ma = smooth_activations(&a, Smoothing::MovingAvg(3)).unwrap();
        let expected = (a.values[(0, 3)] + a.values[(0, 4)] + a.values[(0, 5)]) / 3.0;
        assert!((ma.values[(0, 5)] - expected).abs() < 1e-15);
        assert_eq!(ma.values[(0, 0)], a.values[(0, 0)]);

        let z = smooth_activations(
            &activations(DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0])),
            Smoothing::ZScore,
        )
        .unwrap();
        assert_eq!(
            z.values.row(0).iter().copied().collect::<Vec<_>>(),
            vec![-1.0, 0.0, 1.0]
        );
        let flat = activations(DMatrix::from_element(1, 4, 2.0));
        assert_eq!(
            smooth_activations(&flat, Smoothing::ZScore),
            Err(DmncError::DegenerateRow(0))
        );
        assert!(smooth_activations(&a, Smoothing::Exp(0.0)).is_err());
        assert_eq!(Smoothing::parse("ma(5)"), Some(Some(Smoothing::MovingAvg(5))));
        assert_eq!(Smoothing::parse("none"), Some(None));
    }

    #[test]
    fn window_ordering() {
        let sorted = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)];
        assert_eq!(order_windows(&sorted).unwrap().order, vec![0, 1, 2]);
        let rev = [(2.0, 0.0), (1.0, 0.0), (0.0, 0.0)];
        assert_eq!(order_windows(&rev).unwrap().order, vec![2, 1, 0]);
        let ties = [(1.0, 0.5), (0.0, 9.0), (1.0, -0.5), (1.0, 0.5)];
        assert_eq!(order_windows(&ties).unwrap().order, vec![1, 2, 0, 3]);
    }

    #[test]
    fn vectorize_examples() {
        let c = DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.2, 0.1, 1.0, 0.3, 0.2, 0.3, 1.0]);
        let v = vectorize_upper(&c).unwrap();
        assert_eq!(v.values, vec![0.1, 0.2, 0.3]);
        assert_eq!(devectorize(&v).unwrap(), c);
        assert_eq!(vectorize_upper(&DMatrix::identity(6, 6)).unwrap().values.len(), 15);
        let mut asym = c.clone();
        asym[(0, 1)] = 0.5;
        assert!(matches!(vectorize_upper(&asym), Err(DmncError::AsymmetricInput(_))));
    }

    #[test]
    fn similarity_examples() {
        assert!((cosine_similarity(&[1.0, -2.0], &[3.0, -6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(DmncError::ZeroVector));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 1.2, 1.2, 1.0]);
        assert_eq!(frobenius_distance(&a, &a).unwrap(), 0.0);
        assert!((frobenius_distance(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_tensor_signals_vanish() {
        let c = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, -0.2, 0.4, 1.0, 0.7, -0.2, 0.7, 1.0]);
        let t = tensor_of(vec![c; 6]);
        let jump = similarity_jump(&t).unwrap();
        assert_eq!(jump[0], None);
        assert!(jump[1..].iter().all(|j| *j == Some(0.0)));
        let s = structural_volatility(&t, 3).unwrap();
        assert!(s[..2].iter().all(Option::is_none));
        assert!(s[2..].iter().all(|v| *v == Some(0.0)));
    }

    #[test]
    fn alternating_edge_volatility() {
        let a = 0.3;
        let k = 4;
        let mats: Vec<DMatrix<f64>> = (0..6)
            .map(|t| {
                let mut c = DMatrix::identity(k, k);
                let v = if t % 2 == 0 { a } else { -a };
                c[(0, 1)] = v;
                c[(1, 0)] = v;
                c
            })
            .collect();
        let s = structural_volatility(&tensor_of(mats), 2).unwrap();
        let expected = 2.0 * a * a / (k * k) as f64;
        assert!(s[1..].iter().all(|v| (v.unwrap() - expected).abs() < 1e-15));
    }

    #[test]
    fn baseline_mahalanobis_closed_form() {
        // ±c·e_i has zero mean and sample covariance I when c² = (2d - 1) / 2.
        let d = 3;
        let c = ((2.0 * d as f64 - 1.0) / 2.0).sqrt();
        let mut v = Vec::new();
        for i in 0..d {
            for s in [1.0, -1.0] {
                let mut x = vec![0.0; d];
                x[i] = s * c;
                v.push(x);
            }
        }
        let n = v.len();
        v.push(vec![1.0, 0.0, 0.0]);
        v.push(vec![0.0; d]);
        let dist = mahalanobis_to_baseline(&v, 0..n).unwrap();
        assert!((dist[n] - 1.0 / (1.0 + SHRINKAGE).sqrt()).abs() < 1e-12);
        assert!(dist[n + 1].abs() < 1e-12);
        assert_eq!(
            mahalanobis_to_baseline(&v, 0..3),
            Err(DmncError::InsufficientData { needed: 5, got: 3 })
        );
        let zero = vec![vec![0.0; d]; 8];
        assert_eq!(mahalanobis_to_baseline(&zero, 0..8), Err(DmncError::SingularCovariance));
    }

    #[test]
    fn edge_zscore_examples() {
        let z = zscore_series(&[-1.0, 1.0]).unwrap();
        assert!((z[0] + 0.5f64.sqrt()).abs() < 1e-15 && (z[1] - 0.5f64.sqrt()).abs() < 1e-15);
        let mats: Vec<DMatrix<f64>> = (0..5)
            .map(|t| {
                let mut c = DMatrix::identity(3, 3);
                c[(0, 1)] = 0.1 * t as f64;
                c[(1, 0)] = 0.1 * t as f64;
                c
            })
            .collect();
        let e = edge_zscores(&tensor_of(mats)).unwrap();
        assert_eq!(e.pairs, vec![(0, 1), (0, 2), (1, 2)]);
        assert!(stats::mean(e.z[0].as_ref().unwrap()).abs() < 1e-12);
        assert!(e.z[1].is_none() && e.z[2].is_none());
    }
}
