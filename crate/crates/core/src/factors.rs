//! Risk-On / Risk-Off factor activations, cumulative indices, the rolling
//! risk-shift curve and stock-vs-ETF comparison statistics.

use std::collections::HashMap;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::group_ica::ComponentMap;
use crate::registry::{self, MatchResult, RegistryError};
use crate::stats;

/// Largest cumulative log level accepted before `exp` is considered unsafe.
pub const MAX_LOG_LEVEL: f64 = 700.0;
pub const DEFAULT_RHO_WINDOW: usize = 252;
pub const MIN_SHARED_DATES: usize = 30;
const BASE_LEVEL: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite input")]
    NonFinite,
    #[error("cumulative log level {value} at index {at} exceeds the overflow guard")]
    OverflowGuard { at: usize, value: f64 },
    #[error("window {window} invalid for series of length {len}")]
    InvalidWindow { window: usize, len: usize },
    #[error("need at least {needed} defined points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("only {0} shared dates")]
    InsufficientOverlap(usize),
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("component map has no {0} component")]
    MissingRole(&'static str),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

pub type Result<T> = std::result::Result<T, FactorError>;

/// Daily factor activations and their cumulative index levels.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSeries {
    pub dates: Vec<NaiveDate>,
    pub z_on: Vec<f64>,
    pub z_off: Vec<f64>,
    pub idx_on: Vec<f64>,
    pub idx_off: Vec<f64>,
}

impl FactorSeries {
    pub fn from_activations(dates: Vec<NaiveDate>, z_on: Vec<f64>, z_off: Vec<f64>) -> Result<Self> {
        if z_on.len() != dates.len() || z_off.len() != dates.len() {
            return Err(FactorError::LengthMismatch(dates.len(), z_on.len().max(z_off.len())));
        }
        let idx_on = factor_index(&z_on)?;
        let idx_off = factor_index(&z_off)?;
        Ok(FactorSeries {
            dates,
            z_on,
            z_off,
            idx_on,
            idx_off,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskShiftCurve {
    pub dates: Vec<NaiveDate>,
    /// `None` before the first full window and where a window is constant.
    pub rho: Vec<Option<f64>>,
    pub window: usize,
}

impl RiskShiftCurve {
    pub fn defined(&self) -> Vec<f64> {
        self.rho.iter().flatten().copied().collect()
    }
}

/// ETF-to-stock weights `M` (`N_etf × N_stock`).
#[derive(Debug, Clone, PartialEq)]
pub struct EtfStockWeights {
    pub weights: DMatrix<f64>,
    pub etfs: Vec<String>,
    pub stocks: Vec<String>,
}

impl EtfStockWeights {
    pub fn new(weights: DMatrix<f64>, etfs: Vec<String>, stocks: Vec<String>) -> Result<Self> {
        if weights.nrows() != etfs.len() || weights.ncols() != stocks.len() {
            return Err(FactorError::DimensionMismatch(format!(
                "{}x{} weights for {} ETFs and {} stocks",
                weights.nrows(),
                weights.ncols(),
                etfs.len(),
                stocks.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(FactorError::InvalidWeights(
                "entries must be finite and non-negative".into(),
            ));
        }
        for (i, row) in weights.row_iter().enumerate() {
            if row.sum() > 1.0 + 1e-9 {
                return Err(FactorError::InvalidWeights(format!("row {} sums above 1", etfs[i])));
            }
        }
        Ok(EtfStockWeights { weights, etfs, stocks })
    }
}

/// `z_on[t] = <w_on, r_t>` and `z_off[t] = <w_off, r_t>` for returns `T × N`.
pub fn project_returns(returns: &DMatrix<f64>, w_on: &[f64], w_off: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = returns.ncols();
    if w_on.len() != n || w_off.len() != n {
        return Err(FactorError::DimensionMismatch(format!(
            "{n} assets vs weights of length {} and {}",
            w_on.len(),
            w_off.len()
        )));
    }
    if returns.iter().chain(w_on).chain(w_off).any(|v| !v.is_finite()) {
        return Err(FactorError::NonFinite);
    }
    let z_on = returns * DVector::from_column_slice(w_on);
    let z_off = returns * DVector::from_column_slice(w_off);
    Ok((z_on.iter().copied().collect(), z_off.iter().copied().collect()))
}

/// Scale a loading vector to unit L1 norm, keeping its sign pattern.
pub fn normalize_l1(w: &[f64]) -> Result<Vec<f64>> {
    let norm: f64 = w.iter().map(|x| x.abs()).sum();
    if !norm.is_finite() {
        return Err(FactorError::NonFinite);
    }
    if norm == 0.0 {
        return Err(FactorError::ZeroVariance);
    }
    Ok(w.iter().map(|x| x / norm).collect())
}

/// Risk-On and Risk-Off rows of a labelled map, each scaled to unit L1 norm.
pub fn role_weights(map: &ComponentMap) -> Result<(Vec<f64>, Vec<f64>)> {
    let on = map.risk_on.ok_or(FactorError::MissingRole("Risk-On"))?;
    let off = map.risk_off.ok_or(FactorError::MissingRole("Risk-Off"))?;
    Ok((normalize_l1(&map.row(on))?, normalize_l1(&map.row(off))?))
}

/// `100 * exp(cumulative sum of z)`.
pub fn factor_index(z: &[f64]) -> Result<Vec<f64>> {
    let mut level = 0.0;
    let mut out = Vec::with_capacity(z.len());
    for (t, v) in z.iter().enumerate() {
        if !v.is_finite() {
            return Err(FactorError::NonFinite);
        }
        level += v;
        if level.abs() > MAX_LOG_LEVEL {
            return Err(FactorError::OverflowGuard { at: t, value: level });
        }
        out.push(BASE_LEVEL * level.exp());
    }
    Ok(out)
}

/// Trailing-window Pearson correlation; entry `t` covers `[t - window + 1, t]`.
pub fn rolling_pearson(x: &[f64], y: &[f64], window: usize) -> Result<Vec<Option<f64>>> {
    if x.len() != y.len() {
        return Err(FactorError::LengthMismatch(x.len(), y.len()));
    }
    if window < 2 || window > x.len() {
        return Err(FactorError::InvalidWindow { window, len: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(FactorError::NonFinite);
    }
    Ok((0..x.len())
        .into_par_iter()
        .map(|t| {
            if t + 1 < window {
                None
            } else {
                let lo = t + 1 - window;
                stats::pearson(&x[lo..=t], &y[lo..=t])
            }
        })
        .collect())
}

pub fn risk_shift_curve(series: &FactorSeries, window: usize) -> Result<RiskShiftCurve> {
    Ok(RiskShiftCurve {
        dates: series.dates.clone(),
        rho: rolling_pearson(&series.z_on, &series.z_off, window)?,
        window,
    })
}

/// Interquartile range of the defined points of the curve.
pub fn risk_shift_amplitude(curve: &RiskShiftCurve) -> Result<f64> {
    let values = curve.defined();
    if values.len() < 4 {
        return Err(FactorError::InsufficientData {
            needed: 4,
            got: values.len(),
        });
    }
    Ok(stats::iqr(&values))
}

/// Match stock-space loadings against ETF loadings pushed into stock space
/// through `Mᵀ`.
pub fn structural_overlap(
    stock_map: &ComponentMap,
    etf_map: &ComponentMap,
    m: &EtfStockWeights,
) -> Result<MatchResult> {
    if etf_map.asset_order != m.etfs {
        return Err(FactorError::DimensionMismatch(
            "ETF map assets differ from weight rows".into(),
        ));
    }
    if stock_map.asset_order != m.stocks {
        return Err(FactorError::DimensionMismatch(
            "stock map assets differ from weight columns".into(),
        ));
    }
    if stock_map.k() != etf_map.k() {
        return Err(FactorError::DimensionMismatch(format!(
            "{} stock components vs {} ETF components",
            stock_map.k(),
            etf_map.k()
        )));
    }
    let projected = &etf_map.loadings * &m.weights;
    Ok(registry::match_rows(&stock_map.loadings, &projected)?)
}

/// Full-sample correlation of the Risk-On pair and the Risk-Off pair over
/// the dates both series share.
pub fn temporal_synchrony(a: &FactorSeries, b: &FactorSeries) -> Result<(f64, f64)> {
    let index: HashMap<NaiveDate, usize> = b.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let pairs: Vec<(usize, usize)> = a
        .dates
        .iter()
        .enumerate()
        .filter_map(|(i, d)| index.get(d).map(|&j| (i, j)))
        .collect();
    if pairs.len() < MIN_SHARED_DATES {
        return Err(FactorError::InsufficientOverlap(pairs.len()));
    }
    let corr = |xa: &[f64], xb: &[f64]| -> Result<f64> {
        let u: Vec<f64> = pairs.iter().map(|&(i, _)| xa[i]).collect();
        let v: Vec<f64> = pairs.iter().map(|&(_, j)| xb[j]).collect();
        stats::pearson(&u, &v).ok_or(FactorError::ZeroVariance)
    };
    Ok((corr(&a.z_on, &b.z_on)?, corr(&a.z_off, &b.z_off)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::business_days;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn dates(n: usize) -> Vec<NaiveDate> {
        business_days(NaiveDate::from_ymd_opt(2010, 1, 4).unwrap(), n)
    }

    #[test]
    fn projection_examples() {
        let r = DMatrix::from_row_slice(10, 5, &noise(50, 1));
        let e1 = [1.0, 0.0, 0.0, 0.0, 0.0];
        let (on, _) = project_returns(&r, &e1, &e1).unwrap();
        assert_eq!(on, r.column(0).iter().copied().collect::<Vec<_>>());

        let (on, off) = project_returns(&DMatrix::zeros(10, 5), &e1, &e1).unwrap();
        assert!(on.iter().chain(&off).all(|v| *v == 0.0));

        let w_on = noise(5, 2);
        let w_off = noise(5, 3);
        let (on, off) = project_returns(&r, &w_on, &w_off).unwrap();
        for t in 0..10 {
            let mut a = 0.0;
            let mut b = 0.0;
            for j in 0..5 {
                a += r[(t, j)] * w_on[j];
                b += r[(t, j)] * w_off[j];
            }
            assert!((on[t] - a).abs() < 1e-12);
            assert!((off[t] - b).abs() < 1e-12);
        }
        assert!(matches!(
            project_returns(&r, &[1.0], &e1),
            Err(FactorError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn index_examples() {
        assert_eq!(factor_index(&[0.0; 3]).unwrap(), vec![100.0; 3]);
        assert_relative_eq!(factor_index(&[2f64.ln()]).unwrap()[0], 200.0, max_relative = 1e-14);
        let last = *factor_index(&[0.01; 10]).unwrap().last().unwrap();
        assert_relative_eq!(last, 100.0 * 0.1f64.exp(), max_relative = 1e-12);
        assert_eq!(
            factor_index(&[400.0, 400.0]),
            Err(FactorError::OverflowGuard { at: 1, value: 800.0 })
        );
    }

    #[test]
    fn rolling_examples() {
        let x = noise(60, 4);
        let r = rolling_pearson(&x, &x, 10).unwrap();
        assert!(r[..9].iter().all(Option::is_none));
        assert!(r[9..].iter().all(|v| (v.unwrap() - 1.0).abs() < 1e-12));

        let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 5.0).collect();
        let r = rolling_pearson(&x, &y, 10).unwrap();
        assert!(r[9..].iter().all(|v| (v.unwrap() + 1.0).abs() < 1e-12));

        let mut c = x.clone();
        for v in &mut c[20..35] {
            *v = 0.3;
        }
        let r = rolling_pearson(&c, &x, 10).unwrap();
        assert!(r[29..35].iter().all(Option::is_none));
        assert!(r[28].is_some() && r[35].is_some());
        assert_eq!(rolling_pearson(&x, &x[..5], 3), Err(FactorError::LengthMismatch(60, 5)));
        assert_eq!(
            rolling_pearson(&x, &x, 1),
            Err(FactorError::InvalidWindow { window: 1, len: 60 })
        );
    }

    #[test]
    fn amplitude_examples() {
        let curve = |rho: Vec<Option<f64>>| RiskShiftCurve {
            dates: dates(rho.len()),
            rho,
            window: 2,
        };
        assert_eq!(risk_shift_amplitude(&curve(vec![Some(0.3); 6])).unwrap(), 0.0);
        let grid = vec![Some(-1.0), Some(-0.5), Some(0.0), Some(0.5), Some(1.0)];
        assert!((risk_shift_amplitude(&curve(grid.clone())).unwrap() - 1.0).abs() < 1e-15);
        let mut gapped = grid;
        gapped.insert(2, None);
        assert!((risk_shift_amplitude(&curve(gapped)).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(
            risk_shift_amplitude(&curve(vec![None, Some(1.0)])),
            Err(FactorError::InsufficientData { needed: 4, got: 1 })
        );
    }

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn overlap_identity_and_zero_weights() {
        let loadings = DMatrix::from_row_slice(2, 4, &noise(8, 5));
        let stock = ComponentMap::new(loadings.clone(), names("S", 4), vec![1.0; 2], 60).unwrap();
        let etf = ComponentMap::new(loadings, names("E", 4), vec![1.0; 2], 60).unwrap();
        let m = EtfStockWeights::new(DMatrix::identity(4, 4), names("E", 4), names("S", 4)).unwrap();
        let r = structural_overlap(&stock, &etf, &m).unwrap();
        assert!(r.matched_abs_corr.iter().all(|c| (c - 1.0).abs() < 1e-12));

        let zero = EtfStockWeights::new(DMatrix::zeros(4, 4), names("E", 4), names("S", 4)).unwrap();
        assert!(matches!(
            structural_overlap(&stock, &etf, &zero),
            Err(FactorError::Registry(RegistryError::ZeroVarianceComponent { .. }))
        ));
    }

    #[test]
    fn weights_validation() {
        let bad = DMatrix::from_row_slice(1, 2, &[0.7, 0.7]);
        assert!(EtfStockWeights::new(bad, names("E", 1), names("S", 2)).is_err());
        let neg = DMatrix::from_row_slice(1, 2, &[-0.1, 0.7]);
        assert!(EtfStockWeights::new(neg, names("E", 1), names("S", 2)).is_err());
    }

    #[test]
    fn synchrony_examples() {
        let d = dates(100);
        let a = FactorSeries::from_activations(d.clone(), noise(100, 6), noise(100, 7)).unwrap();
        let (on, off) = temporal_synchrony(&a, &a).unwrap();
        assert!((on - 1.0).abs() < 1e-12 && (off - 1.0).abs() < 1e-12);

        let z = noise(100, 8);
        let b = FactorSeries::from_activations(d[60..].to_vec(), z[60..].to_vec(), z[60..].to_vec()).unwrap();
        let c = FactorSeries::from_activations(d[20..].to_vec(), z[20..].to_vec(), z[20..].to_vec()).unwrap();
        let c_short = FactorSeries::from_activations(d[..60].to_vec(), z[..60].to_vec(), z[..60].to_vec()).unwrap();
        // b and c share the 40 dates from index 60 on; values agree there.
        let (on, _) = temporal_synchrony(&b, &c).unwrap();
        assert!((on - 1.0).abs() < 1e-12);
        assert_eq!(
            temporal_synchrony(&b, &c_short),
            Err(FactorError::InsufficientOverlap(0))
        );
    }

    #[test]
    fn independent_noise_is_unsynchronized() {
        let n = 10_000;
        let d = dates(n);
        let a = FactorSeries::from_activations(
            d.clone(),
            noise(n, 9).iter().map(|v| v * 0.01).collect(),
            noise(n, 10).iter().map(|v| v * 0.01).collect(),
        )
        .unwrap();
        let b = FactorSeries::from_activations(
            d,
            noise(n, 11).iter().map(|v| v * 0.01).collect(),
            noise(n, 12).iter().map(|v| v * 0.01).collect(),
        )
        .unwrap();
        let (on, off) = temporal_synchrony(&a, &b).unwrap();
        assert!(on.abs() < 0.05 && off.abs() < 0.05);
    }
}
