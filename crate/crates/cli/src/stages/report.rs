use std::collections::BTreeMap;
use std::path::Path;

use connectome_core::factors::{risk_shift_amplitude, FactorError};
use connectome_core::io::{self, fmt_f64, fmt_opt, Table};
use connectome_core::stats;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::layout::{Layout, Universe};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: &'static str,
    pub config: BTreeMap<String, String>,
    pub windows: Vec<WindowReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowReport {
    pub w: usize,
    pub cross_era: Option<CrossEraTable>,
    pub occurrence: Vec<Occurrence>,
    pub risk_shift: RiskShift,
    pub structural_volatility: Option<Vec<VolatilitySummary>>,
    pub regimes: Option<RegimeTimeline>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossEraTable {
    pub eras: Vec<String>,
    pub mean_abs_corr: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Occurrence {
    pub era: String,
    pub component: String,
    pub role: Option<String>,
    pub median_iq: f64,
    pub occurrence_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskShift {
    pub window: usize,
    pub defined_points: usize,
    pub amplitude: Option<f64>,
    pub mean_rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolatilitySummary {
    pub era: String,
    pub n_windows: usize,
    pub mean: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeTimeline {
    pub k: usize,
    pub segments: Vec<RegimeSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeSegment {
    pub era: String,
    pub start: String,
    pub end: String,
    pub regime: usize,
    pub windows: usize,
}

fn read_optional(path: &Path) -> Result<Option<Table>> {
    if path.exists() {
        Ok(Some(io::read_table(path)?))
    } else {
        Ok(None)
    }
}

fn cell_f64(t: &Table, r: usize, c: usize) -> Result<f64> {
    Ok(t.float(r, c)?)
}

fn column(t: &Table, name: &str) -> Result<usize> {
    t.header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Input(format!("{}: missing column `{name}`", t.path.display())))
}

fn cross_era(layout: &Layout, w: usize) -> Result<Option<CrossEraTable>> {
    let Some(t) = read_optional(&layout.gica(Universe::Stocks, w).join("cross_era.csv"))? else {
        return Ok(None);
    };
    let mut rows = Vec::with_capacity(t.rows.len());
    for r in 0..t.rows.len() {
        rows.push(
            (1..t.header.len())
                .map(|c| cell_f64(&t, r, c))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok(Some(CrossEraTable {
        eras: t.header[1..].to_vec(),
        mean_abs_corr: rows,
    }))
}

fn occurrence(layout: &Layout, w: usize) -> Result<Vec<Occurrence>> {
    let t = io::read_table(&layout.gica(Universe::Stocks, w).join("occurrence.csv"))?;
    let (era, comp, role) = (column(&t, "era")?, column(&t, "component")?, column(&t, "role")?);
    let (iq, rate) = (column(&t, "median_iq")?, column(&t, "occurrence_rate")?);
    (0..t.rows.len())
        .map(|r| {
            Ok(Occurrence {
                era: t.rows[r][era].clone(),
                component: t.rows[r][comp].clone(),
                role: Some(t.rows[r][role].clone()).filter(|s| !s.is_empty()),
                median_iq: cell_f64(&t, r, iq)?,
                occurrence_rate: cell_f64(&t, r, rate)?,
            })
        })
        .collect()
}

fn risk_shift(layout: &Layout, w: usize) -> Result<(RiskShift, connectome_core::factors::RiskShiftCurve)> {
    let curve = io::read_risk_shift(&layout.factors(Universe::Stocks, w).join("risk_shift.csv"))?;
    let defined = curve.defined();
    let amplitude = match risk_shift_amplitude(&curve) {
        Ok(a) => Some(a),
        Err(FactorError::InsufficientData { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let summary = RiskShift {
        window: curve.window,
        defined_points: defined.len(),
        amplitude,
        mean_rho: (!defined.is_empty()).then(|| stats::mean(&defined)),
    };
    Ok((summary, curve))
}

fn volatility(cfg: &RunConfig, layout: &Layout, w: usize) -> Result<Option<Vec<VolatilitySummary>>> {
    let mut out = Vec::new();
    for era in &cfg.eras {
        let Some(t) = read_optional(&layout.dmnc_era(w, &era.label).join("metrics.csv"))? else {
            return Ok(None);
        };
        let c = column(&t, "structural_volatility")?;
        let values: Vec<f64> = (0..t.rows.len())
            .map(|r| t.opt_float(r, c))
            .collect::<std::result::Result<Vec<_>, _>>()?
            .into_iter()
            .flatten()
            .collect();
        out.push(VolatilitySummary {
            era: era.label.clone(),
            n_windows: t.rows.len(),
            mean: (!values.is_empty()).then(|| stats::mean(&values)),
            max: values.iter().copied().reduce(f64::max),
        });
    }
    Ok(Some(out))
}

fn regimes(layout: &Layout, w: usize) -> Result<Option<RegimeTimeline>> {
    let Some(t) = read_optional(&layout.regimes(w).join("labels.csv"))? else {
        return Ok(None);
    };
    let k: usize = t
        .meta("k")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::Input(format!("{}: missing `k` metadata", t.path.display())))?;
    let (era, ts, reg) = (column(&t, "era")?, column(&t, "timestamp")?, column(&t, "regime")?);
    let mut segments: Vec<RegimeSegment> = Vec::new();
    for row in &t.rows {
        let regime: usize = row[reg]
            .parse()
            .map_err(|_| CliError::Input(format!("{}: bad regime `{}`", t.path.display(), row[reg])))?;
        match segments.last_mut() {
            Some(s) if s.regime == regime && s.era == row[era] => {
                s.end = row[ts].clone();
                s.windows += 1;
            }
            _ => segments.push(RegimeSegment {
                era: row[era].clone(),
                start: row[ts].clone(),
                end: row[ts].clone(),
                regime,
                windows: 1,
            }),
        }
    }
    Ok(Some(RegimeTimeline { k, segments }))
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn write_bundle(layout: &Layout, wr: &WindowReport, curve: &connectome_core::factors::RiskShiftCurve) -> Result<()> {
    let dir = layout.report().join(format!("w{}", wr.w));
    if let Some(c) = &wr.cross_era {
        let mut header = vec!["era".to_string()];
        header.extend(c.eras.iter().cloned());
        let rows: Vec<Vec<String>> = c
            .eras
            .iter()
            .zip(&c.mean_abs_corr)
            .map(|(e, r)| {
                std::iter::once(e.clone())
                    .chain(r.iter().map(|v| fmt_f64(*v)))
                    .collect()
            })
            .collect();
        io::write_table(&dir.join("cross_era.csv"), &[], &header, &rows)?;
    }
    let rows: Vec<Vec<String>> = wr
        .occurrence
        .iter()
        .map(|o| {
            vec![
                o.era.clone(),
                o.component.clone(),
                o.role.clone().unwrap_or_default(),
                fmt_f64(o.median_iq),
                fmt_f64(o.occurrence_rate),
            ]
        })
        .collect();
    let header = strings(&["era", "component", "role", "median_iq", "occurrence_rate"]);
    io::write_table(&dir.join("occurrence.csv"), &[], &header, &rows)?;
    io::write_risk_shift(&dir.join("risk_shift.csv"), curve)?;
    if let Some(vol) = &wr.structural_volatility {
        let rows: Vec<Vec<String>> = vol
            .iter()
            .map(|v| vec![v.era.clone(), v.n_windows.to_string(), fmt_opt(v.mean), fmt_opt(v.max)])
            .collect();
        io::write_table(
            &dir.join("volatility.csv"),
            &[],
            &strings(&["era", "n_windows", "mean", "max"]),
            &rows,
        )?;
    }
    if let Some(reg) = &wr.regimes {
        let rows: Vec<Vec<String>> = reg
            .segments
            .iter()
            .map(|s| {
                vec![
                    s.era.clone(),
                    s.start.clone(),
                    s.end.clone(),
                    s.regime.to_string(),
                    s.windows.to_string(),
                ]
            })
            .collect();
        let header = strings(&["era", "start", "end", "regime", "windows"]);
        io::write_table(&dir.join("regime_timeline.csv"), &[], &header, &rows)?;
    }
    Ok(())
}

/// Collate the products of earlier stages. dMNC and regime sections are
/// null when those stages have not run.
pub fn build(cfg: &RunConfig, layout: &Layout) -> Result<Report> {
    let mut windows = Vec::new();
    for &w in &cfg.windows {
        let (risk_shift, curve) = risk_shift(layout, w)?;
        let wr = WindowReport {
            w,
            cross_era: cross_era(layout, w)?,
            occurrence: occurrence(layout, w)?,
            risk_shift,
            structural_volatility: volatility(cfg, layout, w)?,
            regimes: regimes(layout, w)?,
        };
        write_bundle(layout, &wr, &curve)?;
        windows.push(wr);
    }
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        config: cfg.describe().into_iter().collect(),
        windows,
    })
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let report = build(cfg, layout)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Compute(e.to_string()))?;
    let path = layout.report().join("report.json");
    std::fs::create_dir_all(layout.report()).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    std::fs::write(&path, json + "\n").map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    log::info!("report written to {}", path.display());
    Ok(())
}
