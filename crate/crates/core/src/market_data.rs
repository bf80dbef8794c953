//! Daily bar ingestion, rolling-window features, panel cleaning and era
//! segmentation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Read;

use chrono::NaiveDate;
use indexmap::IndexMap;
use nalgebra::DMatrix;
use thiserror::Error;

/// Minimum share of valid cells a date row needs to survive cleaning,
/// expressed as a ratio `VALID_NUM / VALID_DEN` so ties compare exactly.
const VALID_NUM: usize = 95;
const VALID_DEN: usize = 100;

const BAR_HEADER: [&str; 5] = ["date", "ticker", "adj_close", "close", "volume"];

#[derive(Debug, Error, PartialEq)]
pub enum MarketDataError {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("duplicate bar for ({date}, {ticker})")]
    DuplicateKey { date: NaiveDate, ticker: String },
    #[error("non-positive price at {at}")]
    NonPositivePrice { at: u64 },
    #[error("negative volume at {at}")]
    NegativeVolume { at: u64 },
    #[error("window length {w} is invalid for a series of length {len}")]
    InvalidWindow { w: usize, len: usize },
    #[error("window starting at {0} has zero total volume")]
    ZeroVolumeWindow(usize),
    #[error("column {0} starts with a gap and cannot be forward-filled")]
    UnfillableColumn(String),
    #[error("era {0} contains no rows")]
    EmptyEra(String),
    #[error("invalid era list: {0}")]
    InvalidEra(String),
    #[error("panel is empty after cleaning")]
    EmptyPanel,
    #[error("panel shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub type Result<T> = std::result::Result<T, MarketDataError>;

#[derive(Debug, Clone, PartialEq)]
pub struct DailyBar {
    pub date: NaiveDate,
    pub ticker: String,
    pub adj_close: f64,
    pub close: f64,
    pub volume: f64,
}

/// Which bar field a raw panel is pivoted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarField {
    AdjClose,
    Close,
    Volume,
}

impl BarField {
    fn pick(self, bar: &DailyBar) -> f64 {
        match self {
            BarField::AdjClose => bar.adj_close,
            BarField::Close => bar.close,
            BarField::Volume => bar.volume,
        }
    }
}

/// What the values of an [`AssetPanel`] represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    /// w-day volume-weighted average price.
    Vwap,
    /// w-day mean of daily log returns.
    LogRet,
    /// Daily log returns (no smoothing).
    RawLogRet,
    /// Untransformed bar field (prices or volumes).
    Level,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Vwap => "VWAP",
            FeatureKind::LogRet => "LOGRET",
            FeatureKind::RawLogRet => "RAW_LOGRET",
            FeatureKind::Level => "LEVEL",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "VWAP" => Some(FeatureKind::Vwap),
            "LOGRET" => Some(FeatureKind::LogRet),
            "RAW_LOGRET" => Some(FeatureKind::RawLogRet),
            "LEVEL" => Some(FeatureKind::Level),
            _ => None,
        }
    }
}

/// Parse bars from CSV with header `date,ticker,adj_close,close,volume`.
pub fn load_bars<R: Read>(source: R) -> Result<Vec<DailyBar>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let header = reader.headers().map_err(|e| MarketDataError::MalformedRow {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.len() != BAR_HEADER.len() || header.iter().zip(BAR_HEADER).any(|(a, b)| a != b) {
        return Err(MarketDataError::MalformedRow {
            line: 1,
            reason: format!("expected header {}", BAR_HEADER.join(",")),
        });
    }

    let mut seen = HashSet::new();
    let mut bars = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| MarketDataError::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let malformed = |reason: String| MarketDataError::MalformedRow { line, reason };
        if record.len() != 5 {
            return Err(malformed(format!("expected 5 fields, got {}", record.len())));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| malformed(format!("bad date {:?}: {e}", &record[0])))?;
        let ticker = record[1].to_string();
        if ticker.is_empty() {
            return Err(malformed("empty ticker".into()));
        }
        let number = |idx: usize| -> Result<f64> {
            let v: f64 = record[idx]
                .parse()
                .map_err(|_| malformed(format!("bad number {:?}", &record[idx])))?;
            if !v.is_finite() {
                return Err(malformed(format!("non-finite number {:?}", &record[idx])));
            }
            Ok(v)
        };
        let adj_close = number(2)?;
        let close = number(3)?;
        let volume = number(4)?;
        if adj_close <= 0.0 || close <= 0.0 {
            return Err(MarketDataError::NonPositivePrice { at: line });
        }
        if volume < 0.0 {
            return Err(MarketDataError::NegativeVolume { at: line });
        }
        if !seen.insert((date, ticker.clone())) {
            return Err(MarketDataError::DuplicateKey { date, ticker });
        }
        bars.push(DailyBar {
            date,
            ticker,
            adj_close,
            close,
            volume,
        });
    }
    Ok(bars)
}

/// `out[t] = sum(price[s] * vol[s]) / sum(vol[s])` over `s in t..t+w`.
pub fn vwap_series(prices: &[f64], volumes: &[f64], w: usize) -> Result<Vec<f64>> {
    if prices.len() != volumes.len() {
        return Err(MarketDataError::ShapeMismatch(format!(
            "{} prices vs {} volumes",
            prices.len(),
            volumes.len()
        )));
    }
    if w == 0 || prices.len() < w {
        return Err(MarketDataError::InvalidWindow { w, len: prices.len() });
    }
    if let Some(i) = volumes.iter().position(|v| *v < 0.0) {
        return Err(MarketDataError::NegativeVolume { at: i as u64 });
    }
    (0..=prices.len() - w)
        .map(|t| {
            let (num, den) = (t..t + w).fold((0.0, 0.0), |(n, d), s| (n + prices[s] * volumes[s], d + volumes[s]));
            if den <= 0.0 {
                Err(MarketDataError::ZeroVolumeWindow(t))
            } else {
                Ok(num / den)
            }
        })
        .collect()
}

/// Mean of daily log returns over `w` consecutive days; output length `T - w`.
pub fn logret_series(prices: &[f64], w: usize) -> Result<Vec<f64>> {
    if let Some(i) = prices.iter().position(|p| *p <= 0.0) {
        return Err(MarketDataError::NonPositivePrice { at: i as u64 });
    }
    if w == 0 || prices.len() < w + 1 {
        return Err(MarketDataError::InvalidWindow { w, len: prices.len() });
    }
    let daily: Vec<f64> = prices.windows(2).map(|p| (p[1] / p[0]).ln()).collect();
    Ok(daily.windows(w).map(|win| win.iter().sum::<f64>() / w as f64).collect())
}

/// A date × asset matrix that may contain gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPanel {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    /// Row-major, `dates.len()` rows of `assets.len()` cells.
    pub values: Vec<Vec<Option<f64>>>,
}

impl RawPanel {
    /// Pivot bars into a panel. Dates and tickers are sorted; a date appears
    /// if any asset has a bar on it.
    pub fn from_bars(bars: &[DailyBar], field: BarField) -> Self {
        let dates: BTreeSet<NaiveDate> = bars.iter().map(|b| b.date).collect();
        let assets: BTreeSet<&str> = bars.iter().map(|b| b.ticker.as_str()).collect();
        let date_idx: BTreeMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let asset_idx: BTreeMap<&str, usize> = assets.iter().enumerate().map(|(i, a)| (*a, i)).collect();
        let mut values = vec![vec![None; assets.len()]; dates.len()];
        for bar in bars {
            values[date_idx[&bar.date]][asset_idx[bar.ticker.as_str()]] = Some(field.pick(bar));
        }
        RawPanel {
            dates: dates.into_iter().collect(),
            assets: assets.into_iter().map(str::to_string).collect(),
            values,
        }
    }
}

/// A gap-free date × asset feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetPanel {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    /// `dates.len()` × `assets.len()`.
    pub values: DMatrix<f64>,
    pub feature_kind: FeatureKind,
    pub window_len: usize,
}

impl AssetPanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        values: DMatrix<f64>,
        feature_kind: FeatureKind,
        window_len: usize,
    ) -> Result<Self> {
        if values.nrows() != dates.len() || values.ncols() != assets.len() {
            return Err(MarketDataError::ShapeMismatch(format!(
                "{}x{} values for {} dates and {} assets",
                values.nrows(),
                values.ncols(),
                dates.len(),
                assets.len()
            )));
        }
        if dates.windows(2).any(|d| d[0] >= d[1]) {
            return Err(MarketDataError::ShapeMismatch(
                "dates must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MarketDataError::ShapeMismatch("non-finite value in panel".into()));
        }
        if window_len == 0 {
            return Err(MarketDataError::InvalidWindow { w: 0, len: dates.len() });
        }
        Ok(AssetPanel {
            dates,
            assets,
            values,
            feature_kind,
            window_len,
        })
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    /// Rows whose index is in `range`.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> AssetPanel {
        AssetPanel {
            dates: self.dates[range.clone()].to_vec(),
            assets: self.assets.clone(),
            values: self.values.rows(range.start, range.len()).into_owned(),
            feature_kind: self.feature_kind,
            window_len: self.window_len,
        }
    }

    /// Present the panel as raw input again (every cell valid).
    pub fn to_raw(&self) -> RawPanel {
        RawPanel {
            dates: self.dates.clone(),
            assets: self.assets.clone(),
            values: (0..self.n_dates())
                .map(|i| (0..self.n_assets()).map(|j| Some(self.values[(i, j)])).collect())
                .collect(),
        }
    }
}

/// Drop date rows with fewer than 95% valid cells, then forward-fill the
/// remaining gaps column by column.
///
/// The result is a [`FeatureKind::Level`] panel with `window_len = 1`.
pub fn clean_panel(raw: &RawPanel) -> Result<AssetPanel> {
    let k = raw.assets.len();
    if raw.values.iter().any(|row| row.len() != k) {
        return Err(MarketDataError::ShapeMismatch("ragged raw panel".into()));
    }
    let valid = |v: &Option<f64>| matches!(v, Some(x) if x.is_finite());
    let kept: Vec<usize> = (0..raw.dates.len())
        .filter(|&i| {
            let n_valid = raw.values[i].iter().filter(|v| valid(v)).count();
            k > 0 && n_valid * VALID_DEN >= VALID_NUM * k
        })
        .collect();
    if kept.is_empty() {
        return Err(MarketDataError::EmptyPanel);
    }

    let mut values = DMatrix::zeros(kept.len(), k);
    for j in 0..k {
        let mut last: Option<f64> = None;
        for (r, &i) in kept.iter().enumerate() {
            match raw.values[i][j] {
                Some(x) if x.is_finite() => last = Some(x),
                _ => {}
            }
            values[(r, j)] = last.ok_or_else(|| MarketDataError::UnfillableColumn(raw.assets[j].clone()))?;
        }
    }
    AssetPanel::new(
        kept.iter().map(|&i| raw.dates[i]).collect(),
        raw.assets.clone(),
        values,
        FeatureKind::Level,
        1,
    )
}

/// Compute a rolling feature panel from cleaned price (and, for VWAP,
/// volume) panels. Each output row is labelled with the date of the last
/// day its window covers.
pub fn feature_panel(
    prices: &AssetPanel,
    volumes: Option<&AssetPanel>,
    kind: FeatureKind,
    w: usize,
) -> Result<AssetPanel> {
    let t = prices.n_dates();
    let columns: Vec<Vec<f64>> = match kind {
        FeatureKind::Vwap => {
            let volumes = volumes.ok_or_else(|| MarketDataError::ShapeMismatch("VWAP needs a volume panel".into()))?;
            if volumes.dates != prices.dates || volumes.assets != prices.assets {
                return Err(MarketDataError::ShapeMismatch(
                    "price and volume panels are not aligned".into(),
                ));
            }
            (0..prices.n_assets())
                .map(|j| vwap_series(&prices.column(j), &volumes.column(j), w))
                .collect::<Result<_>>()?
        }
        FeatureKind::LogRet => (0..prices.n_assets())
            .map(|j| logret_series(&prices.column(j), w))
            .collect::<Result<_>>()?,
        FeatureKind::RawLogRet => (0..prices.n_assets())
            .map(|j| logret_series(&prices.column(j), 1))
            .collect::<Result<_>>()?,
        FeatureKind::Level => (0..prices.n_assets()).map(|j| prices.column(j)).collect(),
    };
    let (offset, window_len) = match kind {
        FeatureKind::Vwap => (w - 1, w),
        FeatureKind::LogRet => (w, w),
        FeatureKind::RawLogRet => (1, 1),
        FeatureKind::Level => (0, prices.window_len),
    };
    let rows = t - offset;
    let values = DMatrix::from_fn(rows, prices.n_assets(), |i, j| columns[j][i]);
    AssetPanel::new(
        prices.dates[offset..].to_vec(),
        prices.assets.clone(),
        values,
        kind,
        window_len,
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EraSpec {
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl EraSpec {
    pub fn new(label: impl Into<String>, start: NaiveDate, end: NaiveDate) -> Self {
        EraSpec {
            label: label.into(),
            start,
            end,
        }
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid calendar date")
}

/// The five macro eras S1..S5 (2005-2009, 2010-2014, 2015-2019, 2020-2021,
/// 2022-2025), each spanning whole calendar years.
pub fn default_eras() -> Vec<EraSpec> {
    [
        ("S1", 2005, 2009),
        ("S2", 2010, 2014),
        ("S3", 2015, 2019),
        ("S4", 2020, 2021),
        ("S5", 2022, 2025),
    ]
    .into_iter()
    .map(|(label, y0, y1)| EraSpec::new(label, ymd(y0, 1, 1), ymd(y1, 12, 31)))
    .collect()
}

pub fn validate_eras(eras: &[EraSpec]) -> Result<()> {
    if eras.is_empty() {
        return Err(MarketDataError::InvalidEra("no eras given".into()));
    }
    let mut labels = HashSet::new();
    for era in eras {
        if era.start > era.end {
            return Err(MarketDataError::InvalidEra(format!(
                "{} starts after it ends",
                era.label
            )));
        }
        if !labels.insert(era.label.as_str()) {
            return Err(MarketDataError::InvalidEra(format!("duplicate label {}", era.label)));
        }
    }
    for pair in eras.windows(2) {
        if pair[0].end >= pair[1].start {
            return Err(MarketDataError::InvalidEra(format!(
                "{} and {} overlap or are out of order",
                pair[0].label, pair[1].label
            )));
        }
    }
    Ok(())
}

/// Split a panel into per-era sub-panels by inclusive date range, keeping
/// the era order.
pub fn segment_eras(panel: &AssetPanel, eras: &[EraSpec]) -> Result<IndexMap<String, AssetPanel>> {
    validate_eras(eras)?;
    let mut out = IndexMap::with_capacity(eras.len());
    for era in eras {
        let start = panel.dates.partition_point(|d| *d < era.start);
        let end = panel.dates.partition_point(|d| *d <= era.end);
        if start >= end {
            return Err(MarketDataError::EmptyEra(era.label.clone()));
        }
        out.insert(era.label.clone(), panel.slice_rows(start..end));
    }
    Ok(out)
}
