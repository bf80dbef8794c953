//! CSV readers and writers for the pipeline's on-disk products.
//!
//! Floats use Rust's shortest round-trip formatting, so write/read cycles are
//! lossless. Missing values are empty cells. Lines starting with `#` carry
//! `key=value` metadata.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use nalgebra::DMatrix;
use thiserror::Error;

use crate::factors::{EtfStockWeights, FactorError, FactorSeries, RiskShiftCurve};
use crate::group_ica::{ActivationMatrix, ComponentMap, GroupIcaError};
use crate::market_data::{self, AssetPanel, DailyBar, FeatureKind, MarketDataError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: line {line}: {reason}")]
    Format { path: PathBuf, line: u64, reason: String },
    #[error("{path}: {source}")]
    Bars {
        path: PathBuf,
        #[source]
        source: MarketDataError,
    },
    #[error(transparent)]
    MarketData(#[from] MarketDataError),
    #[error(transparent)]
    GroupIca(#[from] GroupIcaError),
    #[error(transparent)]
    Factor(#[from] FactorError),
}

pub type Result<T> = std::result::Result<T, IoError>;

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt_f64)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| IoError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    File::create(path).map(BufWriter::new).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Write a CSV file with optional `# key=value` metadata lines.
pub fn write_table(path: &Path, meta: &[(&str, String)], header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let io_err = |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = create(path)?;
    for (k, v) in meta {
        writeln!(out, "# {k}={v}").map_err(io_err)?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let csv_err = |source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        };
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush().map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Parsed CSV table: metadata, header and string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub path: PathBuf,
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn format_err(&self, row: usize, reason: impl Into<String>) -> IoError {
        IoError::Format {
            path: self.path.clone(),
            line: (self.meta.len() + row + 2) as u64,
            reason: reason.into(),
        }
    }

    fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key).ok_or_else(|| IoError::Format {
            path: self.path.clone(),
            line: 1,
            reason: format!("missing `# {key}=` metadata"),
        })
    }

    pub fn float(&self, row: usize, col: usize) -> Result<f64> {
        let cell = self.rows[row][col].trim();
        if cell.is_empty() {
            return Ok(f64::NAN);
        }
        cell.parse()
            .map_err(|_| self.format_err(row, format!("bad number `{cell}` in column {}", self.header[col])))
    }

    pub fn opt_float(&self, row: usize, col: usize) -> Result<Option<f64>> {
        let v = self.float(row, col)?;
        Ok((!v.is_nan()).then_some(v))
    }

    pub fn date(&self, row: usize, col: usize) -> Result<NaiveDate> {
        let cell = self.rows[row][col].trim();
        NaiveDate::parse_from_str(cell, "%Y-%m-%d").map_err(|_| self.format_err(row, format!("bad date `{cell}`")))
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut text = String::new();
    open(path)?.read_to_string(&mut text).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut meta = Vec::new();
    let mut body_start = 0;
    for line in text.lines() {
        let Some(rest) = line.strip_prefix('#') else { break };
        body_start += line.len() + 1;
        if let Some((k, v)) = rest.trim().split_once('=') {
            meta.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let body = text.get(body_start..).unwrap_or("");
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()
        .map_err(csv_err)?;
    Ok(Table {
        path: path.to_path_buf(),
        meta,
        header,
        rows,
    })
}

/// Plain numeric matrix with `rows`/`cols` metadata and `c0..` headers.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("c{j}")).collect();
    let rows: Vec<Vec<String>> = m.row_iter().map(|r| r.iter().map(|v| fmt_f64(*v)).collect()).collect();
    write_table(
        path,
        &[("rows", m.nrows().to_string()), ("cols", m.ncols().to_string())],
        &header,
        &rows,
    )
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let t = read_table(path)?;
    let parse_dim = |key: &str| -> Result<usize> {
        t.require_meta(key)?
            .parse()
            .map_err(|_| t.format_err(0, format!("bad `{key}`")))
    };
    let (r, c) = (parse_dim("rows")?, parse_dim("cols")?);
    if t.rows.len() != r || t.header.len() != c {
        return Err(t.format_err(0, format!("expected {r}x{c} values")));
    }
    let mut m = DMatrix::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            m[(i, j)] = t.float(i, j)?;
        }
    }
    Ok(m)
}

/// `date,<assets...>` with `feature_kind` and `window_len` metadata.
pub fn write_panel(path: &Path, panel: &AssetPanel) -> Result<()> {
    let mut header = vec!["date".to_string()];
    header.extend(panel.assets.iter().cloned());
    let rows: Vec<Vec<String>> = (0..panel.n_dates())
        .map(|t| {
            let mut row = vec![panel.dates[t].to_string()];
            row.extend(panel.values.row(t).iter().map(|v| fmt_f64(*v)));
            row
        })
        .collect();
    write_table(
        path,
        &[
            ("feature_kind", panel.feature_kind.as_str().to_string()),
            ("window_len", panel.window_len.to_string()),
        ],
        &header,
        &rows,
    )
}

pub fn read_panel(path: &Path) -> Result<AssetPanel> {
    let t = read_table(path)?;
    let kind_s = t.require_meta("feature_kind")?;
    let kind = FeatureKind::parse(kind_s).ok_or_else(|| t.format_err(0, format!("unknown feature kind `{kind_s}`")))?;
    let w: usize = t
        .require_meta("window_len")?
        .parse()
        .map_err(|_| t.format_err(0, "bad window_len"))?;
    if t.header.first().map(String::as_str) != Some("date") {
        return Err(t.format_err(0, "first column must be `date`"));
    }
    let assets: Vec<String> = t.header[1..].to_vec();
    let mut dates = Vec::with_capacity(t.rows.len());
    let mut values = DMatrix::zeros(t.rows.len(), assets.len());
    for i in 0..t.rows.len() {
        if t.rows[i].len() != t.header.len() {
            return Err(t.format_err(i, "wrong number of fields"));
        }
        dates.push(t.date(i, 0)?);
        for j in 0..assets.len() {
            values[(i, j)] = t.float(i, j + 1)?;
        }
    }
    Ok(AssetPanel::new(dates, assets, values, kind, w)?)
}

fn role_of(map: &ComponentMap, i: usize) -> &'static str {
    if map.risk_on == Some(i) {
        "risk_on"
    } else if map.risk_off == Some(i) {
        "risk_off"
    } else {
        ""
    }
}

/// `component,role,iq,<assets...>` with `window_len` metadata.
pub fn write_component_map(path: &Path, map: &ComponentMap) -> Result<()> {
    let mut header = vec!["component".to_string(), "role".to_string(), "iq".to_string()];
    header.extend(map.asset_order.iter().cloned());
    let rows: Vec<Vec<String>> = (0..map.k())
        .map(|i| {
            let mut row = vec![map.labels[i].clone(), role_of(map, i).to_string(), fmt_f64(map.iq[i])];
            row.extend(map.loadings.row(i).iter().map(|v| fmt_f64(*v)));
            row
        })
        .collect();
    write_table(path, &[("window_len", map.window_len.to_string())], &header, &rows)
}

pub fn read_component_map(path: &Path) -> Result<ComponentMap> {
    let t = read_table(path)?;
    if t.header.len() < 4 || t.header[..3] != ["component", "role", "iq"] {
        return Err(t.format_err(0, "header must start with component,role,iq"));
    }
    let w: usize = t
        .require_meta("window_len")?
        .parse()
        .map_err(|_| t.format_err(0, "bad window_len"))?;
    let assets = t.header[3..].to_vec();
    let k = t.rows.len();
    let mut loadings = DMatrix::zeros(k, assets.len());
    let mut iq = Vec::with_capacity(k);
    let mut labels = Vec::with_capacity(k);
    let (mut risk_on, mut risk_off) = (None, None);
    for i in 0..k {
        if t.rows[i].len() != t.header.len() {
            return Err(t.format_err(i, "wrong number of fields"));
        }
        labels.push(t.rows[i][0].clone());
        match t.rows[i][1].as_str() {
            "risk_on" => risk_on = Some(i),
            "risk_off" => risk_off = Some(i),
            "" => {}
            other => return Err(t.format_err(i, format!("unknown role `{other}`"))),
        }
        iq.push(t.float(i, 2)?);
        for j in 0..assets.len() {
            loadings[(i, j)] = t.float(i, j + 3)?;
        }
    }
    let mut map = ComponentMap::new(loadings, assets, iq, w)?;
    map.labels = labels;
    map.risk_on = risk_on;
    map.risk_off = risk_off;
    Ok(map)
}

/// `date,<component labels...>`, one row per window.
pub fn write_activations(path: &Path, a: &ActivationMatrix) -> Result<()> {
    let mut header = vec!["date".to_string()];
    header.extend(a.labels.iter().cloned());
    let rows: Vec<Vec<String>> = (0..a.len())
        .map(|t| {
            let mut row = vec![a.dates[t].to_string()];
            row.extend(a.values.column(t).iter().map(|v| fmt_f64(*v)));
            row
        })
        .collect();
    write_table(path, &[], &header, &rows)
}

pub fn read_activations(path: &Path) -> Result<ActivationMatrix> {
    let t = read_table(path)?;
    if t.header.first().map(String::as_str) != Some("date") {
        return Err(t.format_err(0, "first column must be `date`"));
    }
    let k = t.header.len() - 1;
    let mut values = DMatrix::zeros(k, t.rows.len());
    let mut dates = Vec::with_capacity(t.rows.len());
    for s in 0..t.rows.len() {
        if t.rows[s].len() != t.header.len() {
            return Err(t.format_err(s, "wrong number of fields"));
        }
        dates.push(t.date(s, 0)?);
        for i in 0..k {
            values[(i, s)] = t.float(s, i + 1)?;
        }
    }
    Ok(ActivationMatrix {
        values,
        labels: t.header[1..].to_vec(),
        dates,
    })
}

/// `date,z_on,z_off,idx_on,idx_off`.
pub fn write_factor_series(path: &Path, f: &FactorSeries) -> Result<()> {
    let header: Vec<String> = ["date", "z_on", "z_off", "idx_on", "idx_off"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = (0..f.len())
        .map(|t| {
            vec![
                f.dates[t].to_string(),
                fmt_f64(f.z_on[t]),
                fmt_f64(f.z_off[t]),
                fmt_f64(f.idx_on[t]),
                fmt_f64(f.idx_off[t]),
            ]
        })
        .collect();
    write_table(path, &[], &header, &rows)
}

pub fn read_factor_series(path: &Path) -> Result<FactorSeries> {
    let t = read_table(path)?;
    if t.header != ["date", "z_on", "z_off", "idx_on", "idx_off"] {
        return Err(t.format_err(0, "header must be date,z_on,z_off,idx_on,idx_off"));
    }
    let mut dates = Vec::new();
    let mut z_on = Vec::new();
    let mut z_off = Vec::new();
    for s in 0..t.rows.len() {
        dates.push(t.date(s, 0)?);
        z_on.push(t.float(s, 1)?);
        z_off.push(t.float(s, 2)?);
    }
    Ok(FactorSeries::from_activations(dates, z_on, z_off)?)
}

/// `date,rho<window>`; undefined points are empty cells.
pub fn write_risk_shift(path: &Path, c: &RiskShiftCurve) -> Result<()> {
    let header = vec!["date".to_string(), format!("rho{}", c.window)];
    let rows: Vec<Vec<String>> = c
        .dates
        .iter()
        .zip(&c.rho)
        .map(|(d, r)| vec![d.to_string(), fmt_opt(*r)])
        .collect();
    write_table(path, &[("window", c.window.to_string())], &header, &rows)
}

pub fn read_risk_shift(path: &Path) -> Result<RiskShiftCurve> {
    let t = read_table(path)?;
    let window: usize = t
        .require_meta("window")?
        .parse()
        .map_err(|_| t.format_err(0, "bad window"))?;
    let mut dates = Vec::new();
    let mut rho = Vec::new();
    for s in 0..t.rows.len() {
        dates.push(t.date(s, 0)?);
        rho.push(t.opt_float(s, 1)?);
    }
    Ok(RiskShiftCurve { dates, rho, window })
}

/// ETF rows, stock columns: `etf,<stocks...>`.
pub fn read_weights(path: &Path) -> Result<EtfStockWeights> {
    let t = read_table(path)?;
    if t.header.len() < 2 {
        return Err(t.format_err(0, "need an ETF column and at least one stock"));
    }
    let stocks = t.header[1..].to_vec();
    let mut etfs = Vec::new();
    let mut w = DMatrix::zeros(t.rows.len(), stocks.len());
    for i in 0..t.rows.len() {
        if t.rows[i].len() != t.header.len() {
            return Err(t.format_err(i, "wrong number of fields"));
        }
        etfs.push(t.rows[i][0].clone());
        for j in 0..stocks.len() {
            let v = t.float(i, j + 1)?;
            w[(i, j)] = if v.is_nan() { 0.0 } else { v };
        }
    }
    Ok(EtfStockWeights::new(w, etfs, stocks)?)
}

pub fn write_weights(path: &Path, m: &EtfStockWeights) -> Result<()> {
    let mut header = vec!["etf".to_string()];
    header.extend(m.stocks.iter().cloned());
    let rows: Vec<Vec<String>> = m
        .etfs
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut row = vec![e.clone()];
            row.extend(m.weights.row(i).iter().map(|v| fmt_f64(*v)));
            row
        })
        .collect();
    write_table(path, &[], &header, &rows)
}

/// Read a bars file; parse errors carry the path.
pub fn read_bars(path: &Path) -> Result<Vec<DailyBar>> {
    market_data::load_bars(open(path)?).map_err(|source| IoError::Bars {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_bars(path: &Path, bars: &[DailyBar]) -> Result<()> {
    let header: Vec<String> = ["date", "ticker", "adj_close", "close", "volume"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = bars
        .iter()
        .map(|b| {
            vec![
                b.date.to_string(),
                b.ticker.clone(),
                fmt_f64(b.adj_close),
                fmt_f64(b.close),
                fmt_f64(b.volume),
            ]
        })
        .collect();
    write_table(path, &[], &header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::business_days;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("connectome-io-{}", std::process::id()));
        dir.join(name)
    }

    #[test]
    fn matrix_round_trip_is_lossless() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -1.0 / 3.0, 1e-300, f64::MAX, 2.5e17, -0.0]);
        let p = tmp("m.csv");
        write_matrix(&p, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
    }

    #[test]
    fn panel_round_trip() {
        let dates = business_days(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), 3);
        let panel = AssetPanel::new(
            dates,
            vec!["A".into(), "B".into()],
            DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0 / 7.0]),
            FeatureKind::LogRet,
            60,
        )
        .unwrap();
        let p = tmp("panel.csv");
        write_panel(&p, &panel).unwrap();
        assert_eq!(read_panel(&p).unwrap(), panel);
    }

    #[test]
    fn component_map_round_trip() {
        let mut map = ComponentMap::new(
            DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, -0.4, 0.5, 1.0 / 3.0]),
            vec!["X".into(), "Y".into(), "Z".into()],
            vec![0.95, 0.5],
            90,
        )
        .unwrap();
        map.risk_on = Some(1);
        map.risk_off = Some(0);
        let p = tmp("map.csv");
        write_component_map(&p, &map).unwrap();
        assert_eq!(read_component_map(&p).unwrap(), map);
    }

    #[test]
    fn risk_shift_keeps_missing_cells() {
        let c = RiskShiftCurve {
            dates: business_days(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), 3),
            rho: vec![None, Some(0.25), None],
            window: 2,
        };
        let p = tmp("rho.csv");
        write_risk_shift(&p, &c).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("2020-01-01,\n"));
        assert_eq!(read_risk_shift(&p).unwrap(), c);
    }

    #[test]
    fn bad_number_reports_line() {
        let p = tmp("bad.csv");
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(&p, "# rows=1\n# cols=1\nc0\nabc\n").unwrap();
        match read_matrix(&p) {
            Err(IoError::Format { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bars_round_trip_and_missing_file() {
        let scenario = crate::synth::BarScenario {
            n_assets: 3,
            n_days: 5,
            ..Default::default()
        };
        let (bars, _) = crate::synth::gen_bars(&scenario).unwrap();
        let p = tmp("bars.csv");
        write_bars(&p, &bars).unwrap();
        assert_eq!(read_bars(&p).unwrap(), bars);
        match read_bars(&tmp("absent.csv")) {
            Err(IoError::Io { path, .. }) => assert!(path.ends_with("absent.csv")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
