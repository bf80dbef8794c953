//! Synthetic ground truth: non-Gaussian sources, linear mixtures, planted
//! regime activations and bar files that exercise the full pipeline.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::group_ica::ActivationMatrix;
use crate::ica::WhiteningResult;
use crate::market_data::DailyBar;
use crate::registry::{self, RegistryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("covariance template {0} is not positive semi-definite")]
    NotPsd(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid regime schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Matching(#[from] RegistryError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceDist {
    /// Double exponential; excess kurtosis 3.
    Laplace,
    /// Flat on `[-sqrt(3), sqrt(3)]`; excess kurtosis -1.2.
    Uniform,
    /// `sign(n) * n^2` for standard normal `n`.
    SignedSquare,
    /// Standard normal; no independent structure for ICA to find.
    Gaussian,
}

impl SourceDist {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "laplace" => Some(SourceDist::Laplace),
            "uniform" => Some(SourceDist::Uniform),
            "signed_square" => Some(SourceDist::SignedSquare),
            "gaussian" => Some(SourceDist::Gaussian),
            _ => None,
        }
    }

    fn draw(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            SourceDist::Laplace => loop {
                let u: f64 = rng.random::<f64>() - 0.5;
                let tail = 1.0 - 2.0 * u.abs();
                if tail > 0.0 {
                    break -u.signum() * tail.ln();
                }
            },
            SourceDist::Uniform => (rng.random::<f64>() * 2.0 - 1.0) * 3f64.sqrt(),
            SourceDist::SignedSquare => {
                let n: f64 = StandardNormal.sample(rng);
                n.signum() * n * n
            }
            SourceDist::Gaussian => StandardNormal.sample(rng),
        }
    }
}

fn standardize_rows(m: &mut DMatrix<f64>) {
    let t = m.ncols();
    if t < 2 {
        return;
    }
    for mut row in m.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
        let sd = (row.norm_squared() / (t - 1) as f64).sqrt();
        if sd > 0.0 {
            row /= sd;
        }
    }
}

/// `K × T` independent sources, centered and scaled to unit sample variance.
pub fn gen_sources(k: usize, t: usize, dist: SourceDist, seed: u64) -> DMatrix<f64> {
    gen_held_sources(k, t, dist, 1, seed)
}

/// Like [`gen_sources`] but each draw is held for `hold` consecutive
/// samples, giving slowly varying sources that stay non-Gaussian after
/// rolling-window averaging.
pub fn gen_held_sources(k: usize, t: usize, dist: SourceDist, hold: usize, seed: u64) -> DMatrix<f64> {
    let hold = hold.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DMatrix::zeros(k, t);
    for i in 0..k {
        let mut current = 0.0;
        for j in 0..t {
            if j % hold == 0 {
                current = dist.draw(&mut rng);
            }
            m[(i, j)] = current;
        }
    }
    standardize_rows(&mut m);
    m
}

/// `X = A S` ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingModel {
    /// `F × K`.
    pub mixing: DMatrix<f64>,
    /// `K × T`.
    pub sources: DMatrix<f64>,
}

pub fn mix(model: &MixingModel) -> Result<DMatrix<f64>> {
    if model.mixing.ncols() != model.sources.nrows() {
        return Err(SynthError::DimensionMismatch(format!(
            "mixing is {}x{} but sources have {} rows",
            model.mixing.nrows(),
            model.mixing.ncols(),
            model.sources.nrows()
        )));
    }
    Ok(&model.mixing * &model.sources)
}

/// Dense standard-normal mixing matrix.
pub fn gen_mixing(f: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..f * k).map(|_| StandardNormal.sample(&mut rng)).collect();
    DMatrix::from_row_slice(f, k, &draws)
}

/// Sector-style mixing: asset `i` loads on module `i mod K` with a weight in
/// `[0.8, 1.2]`, plus Gaussian cross-loadings of scale `cross` on every
/// module. Columns are close to orthogonal for small `cross`.
pub fn gen_sector_mixing(f: usize, k: usize, cross: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::zeros(f, k);
    for i in 0..f {
        for j in 0..k {
            let noise: f64 = StandardNormal.sample(&mut rng);
            a[(i, j)] = cross * noise;
        }
        a[(i, i % k)] += 0.8 + 0.4 * rng.random::<f64>();
    }
    a
}

/// Unmix the synthetic observations with `unmixing · whitening`, match the
/// estimates to the true sources by `|corr|`, and report the mean matched
/// `|corr|`.
pub fn recovery_score(unmixing: &DMatrix<f64>, whitening: &WhiteningResult, model: &MixingModel) -> Result<f64> {
    if unmixing.ncols() != whitening.rank() {
        return Err(SynthError::DimensionMismatch(format!(
            "unmixing has {} columns, whitening rank is {}",
            unmixing.ncols(),
            whitening.rank()
        )));
    }
    if whitening.forward.ncols() != model.mixing.nrows() {
        return Err(SynthError::DimensionMismatch(
            "whitening does not match the observed dimension".into(),
        ));
    }
    let x = mix(model)?;
    let estimated = unmixing * whitening.apply(&x);
    Ok(source_recovery(&estimated, &model.sources)?.mean)
}

/// Matched `|corr|` between estimated and true source rows.
pub fn source_recovery(estimated: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<registry::RowMatch> {
    if estimated.nrows() != truth.nrows() || estimated.ncols() != truth.ncols() {
        return Err(SynthError::DimensionMismatch(format!(
            "estimated {:?} vs true {:?}",
            estimated.shape(),
            truth.shape()
        )));
    }
    Ok(registry::match_rows(estimated, truth)?)
}

/// Matched `|corr|` between loading rows (`K × N`) and mixing columns
/// (`N × K`).
pub fn loading_recovery(loadings: &DMatrix<f64>, mixing: &DMatrix<f64>) -> Result<registry::RowMatch> {
    if loadings.ncols() != mixing.nrows() || loadings.nrows() != mixing.ncols() {
        return Err(SynthError::DimensionMismatch(format!(
            "loadings {:?} vs mixing {:?}",
            loadings.shape(),
            mixing.shape()
        )));
    }
    Ok(registry::match_rows(loadings, &mixing.transpose())?)
}

/// Matched `|corr|` between estimated mixing columns and true mixing
/// columns (both `N × K`).
pub fn pattern_recovery(estimate: &DMatrix<f64>, mixing: &DMatrix<f64>) -> Result<registry::RowMatch> {
    if estimate.shape() != mixing.shape() {
        return Err(SynthError::DimensionMismatch(format!(
            "estimate {:?} vs mixing {:?}",
            estimate.shape(),
            mixing.shape()
        )));
    }
    Ok(registry::match_rows(&estimate.transpose(), &mixing.transpose())?)
}

/// A half-open stretch `[start, end)` of time steps sharing one covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSegment {
    pub start: usize,
    pub end: usize,
    pub covariance: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    pub mixing: MixingModel,
    pub regime_schedule: Vec<RegimeSegment>,
    pub seed: u64,
    pub t: usize,
    pub n: usize,
}

impl SyntheticScenario {
    pub fn validate(&self) -> Result<()> {
        if self.mixing.mixing.nrows() != self.n || self.mixing.sources.ncols() != self.t {
            return Err(SynthError::DimensionMismatch(
                "mixing model does not match (n, t)".into(),
            ));
        }
        check_schedule(&self.regime_schedule, self.t)?;
        for (i, seg) in self.regime_schedule.iter().enumerate() {
            psd_factor(&seg.covariance).ok_or(SynthError::NotPsd(i))?;
        }
        Ok(())
    }
}

fn check_schedule(schedule: &[RegimeSegment], t: usize) -> Result<()> {
    if schedule.is_empty() {
        return Err(SynthError::InvalidSchedule("empty schedule".into()));
    }
    let mut cursor = 0;
    for seg in schedule {
        if seg.start != cursor || seg.end <= seg.start {
            return Err(SynthError::InvalidSchedule(format!(
                "segment [{}, {}) does not continue at {cursor}",
                seg.start, seg.end
            )));
        }
        cursor = seg.end;
    }
    if cursor != t {
        return Err(SynthError::InvalidSchedule(format!(
            "segments cover [0, {cursor}) but T = {t}"
        )));
    }
    Ok(())
}

/// `L` with `L Lᵀ = C`, or `None` if `C` is not symmetric PSD.
fn psd_factor(c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if !c.is_square() || (c - c.transpose()).amax() > 1e-10 {
        return None;
    }
    let eig = SymmetricEigen::new(c.clone());
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|l| *l < -1e-10 * scale) {
        return None;
    }
    let v = &eig.eigenvectors;
    Some(DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| {
        v[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt()
    }))
}

/// Draw a `K × T` activation matrix whose columns in each segment follow
/// `N(0, C_segment)` plus isotropic noise of standard deviation `noise`.
/// Returns the activations and the planted segment index of each time step.
pub fn gen_regime_tensor(
    schedule: &[RegimeSegment],
    k: usize,
    noise: f64,
    seed: u64,
) -> Result<(ActivationMatrix, Vec<usize>)> {
    if !(noise > 0.0 && noise.is_finite()) {
        return Err(SynthError::InvalidParameter(format!(
            "noise must be positive, got {noise}"
        )));
    }
    let t = schedule.last().map(|s| s.end).unwrap_or(0);
    check_schedule(schedule, t)?;
    let factors: Vec<DMatrix<f64>> = schedule
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            if seg.covariance.shape() != (k, k) {
                return Err(SynthError::DimensionMismatch(format!(
                    "template {i} is {:?}, expected {k}x{k}",
                    seg.covariance.shape()
                )));
            }
            psd_factor(&seg.covariance).ok_or(SynthError::NotPsd(i))
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = DMatrix::zeros(k, t);
    let mut labels = Vec::with_capacity(t);
    for (r, seg) in schedule.iter().enumerate() {
        for col in seg.start..seg.end {
            let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
            for i in 0..k {
                let structured: f64 = (0..k).map(|j| factors[r][(i, j)] * z[j]).sum();
                let eps: f64 = StandardNormal.sample(&mut rng);
                values[(i, col)] = structured + noise * eps;
            }
            labels.push(r);
        }
    }
    let dates = business_days(NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date"), t);
    Ok((ActivationMatrix::new(values, dates), labels))
}

/// `n` consecutive weekdays starting at (or after) `start`.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// Parameters for a synthetic bar file.
#[derive(Debug, Clone, PartialEq)]
pub struct BarScenario {
    pub n_assets: usize,
    pub n_sources: usize,
    pub n_days: usize,
    pub seed: u64,
    pub dist: SourceDist,
    /// Samples each source draw is held for.
    pub hold: usize,
    /// Daily log-return scale of one unit of source activity.
    pub return_scale: f64,
    /// Cross-loading scale of the sector mixing.
    pub cross_loading: f64,
    /// Idiosyncratic daily return noise.
    pub idio_noise: f64,
    pub start: NaiveDate,
}

impl Default for BarScenario {
    fn default() -> Self {
        BarScenario {
            n_assets: 20,
            n_sources: 4,
            n_days: 1500,
            seed: 7,
            dist: SourceDist::Laplace,
            hold: 20,
            return_scale: 0.01,
            cross_loading: 0.1,
            idio_noise: 0.0005,
            start: NaiveDate::from_ymd_opt(2005, 1, 3).expect("valid date"),
        }
    }
}

/// Tickers `SYN000`, `SYN001`, ...
pub fn synthetic_tickers(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("SYN{i:03}")).collect()
}

/// Generate daily bars whose log returns are `scale · A S + noise`, with
/// sector mixing `A` and held sources `S`. Returns the bars (date-major,
/// tickers ascending) and the planted model.
pub fn gen_bars(scenario: &BarScenario) -> Result<(Vec<DailyBar>, MixingModel)> {
    let s = scenario;
    if s.n_assets == 0 || s.n_sources == 0 || s.n_days < 2 {
        return Err(SynthError::InvalidParameter(
            "n_assets, n_sources must be positive and n_days >= 2".into(),
        ));
    }
    if !(s.return_scale > 0.0) || s.idio_noise < 0.0 {
        return Err(SynthError::InvalidParameter("scales must be positive".into()));
    }
    let mixing = gen_sector_mixing(s.n_assets, s.n_sources, s.cross_loading, s.seed ^ 0xA5A5);
    let sources = gen_held_sources(s.n_sources, s.n_days - 1, s.dist, s.hold, s.seed);
    let model = MixingModel { mixing, sources };
    let returns = mix(&model)?;
    let dates = business_days(s.start, s.n_days);
    let tickers = synthetic_tickers(s.n_assets);
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(0x5eed));
    let mut log_price = vec![100f64.ln(); s.n_assets];
    let mut bars = Vec::with_capacity(s.n_assets * s.n_days);
    for (day, date) in dates.iter().enumerate() {
        for (i, ticker) in tickers.iter().enumerate() {
            if day > 0 {
                let eps: f64 = StandardNormal.sample(&mut rng);
                log_price[i] += s.return_scale * returns[(i, day - 1)] + s.idio_noise * eps;
            }
            let price = log_price[i].exp();
            let volume = (1e5 + 9e5 * rng.random::<f64>()).round();
            bars.push(DailyBar {
                date: *date,
                ticker: ticker.clone(),
                adj_close: price,
                close: price,
                volume,
            });
        }
    }
    Ok((bars, model))
}
