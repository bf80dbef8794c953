use connectome_core::factors::{
    project_returns, risk_shift_curve, role_weights, structural_overlap, temporal_synchrony, FactorSeries,
};
use connectome_core::io::{self, fmt_f64};
use connectome_core::market_data::segment_eras;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::layout::{Layout, Universe};

/// Risk-On/Risk-Off factor returns over all eras, each era projected with
/// its own map's role weights.
pub fn factor_series(cfg: &RunConfig, layout: &Layout, u: Universe, w: usize) -> Result<FactorSeries> {
    let returns = io::read_panel(&layout.returns(u))?;
    let mut dates = Vec::new();
    let (mut z_on, mut z_off) = (Vec::new(), Vec::new());
    for (label, era) in segment_eras(&returns, &cfg.eras)? {
        let path = layout.gica_era(u, w, &label).join("map.csv");
        let map = io::read_component_map(&path)?;
        if map.asset_order != era.assets {
            return Err(CliError::Input(format!(
                "{}: assets differ from the returns panel",
                path.display()
            )));
        }
        let (w_on, w_off) = role_weights(&map)?;
        let (on, off) = project_returns(&era.values, &w_on, &w_off)?;
        dates.extend(era.dates);
        z_on.extend(on);
        z_off.extend(off);
    }
    Ok(FactorSeries::from_activations(dates, z_on, z_off)?)
}

fn universe(cfg: &RunConfig, layout: &Layout, u: Universe, w: usize) -> Result<FactorSeries> {
    let series = factor_series(cfg, layout, u, w)?;
    let curve = risk_shift_curve(&series, cfg.rho_window)?;
    let dir = layout.factors(u, w);
    io::write_factor_series(&dir.join("factors.csv"), &series)?;
    io::write_risk_shift(&dir.join("risk_shift.csv"), &curve)?;
    Ok(series)
}

fn cross_brain(cfg: &RunConfig, layout: &Layout, w: usize, stocks: &FactorSeries, etfs: &FactorSeries) -> Result<()> {
    let dir = layout.factors(Universe::Stocks, w);
    let (sync_on, sync_off) = temporal_synchrony(stocks, etfs)?;
    io::write_table(
        &dir.join("synchrony.csv"),
        &[],
        &["risk_on".to_string(), "risk_off".to_string()],
        &[vec![fmt_f64(sync_on), fmt_f64(sync_off)]],
    )?;
    let Some(weights_path) = cfg.etf_weights.as_deref() else {
        return Ok(());
    };
    let weights = io::read_weights(weights_path)?;
    let mut rows = Vec::new();
    for era in &cfg.eras {
        let stock_map = io::read_component_map(&layout.gica_era(Universe::Stocks, w, &era.label).join("map.csv"))?;
        let etf_map = io::read_component_map(&layout.gica_era(Universe::Etfs, w, &era.label).join("map.csv"))?;
        let m = structural_overlap(&stock_map, &etf_map, &weights)?;
        for (i, &j) in m.permutation.iter().enumerate() {
            rows.push(vec![
                era.label.clone(),
                stock_map.labels[i].clone(),
                etf_map.labels[j].clone(),
                fmt_f64(m.matched_abs_corr[i]),
            ]);
        }
    }
    let header = ["era", "stock_component", "etf_component", "abs_corr"].map(String::from);
    io::write_table(&dir.join("overlap.csv"), &[], &header, &rows)?;
    Ok(())
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    for &w in &cfg.windows {
        let stocks = universe(cfg, layout, Universe::Stocks, w)?;
        if cfg.etf_input.is_some() {
            let etfs = universe(cfg, layout, Universe::Etfs, w)?;
            cross_brain(cfg, layout, w, &stocks, &etfs)?;
        }
        log::info!("factors w={w}: {} dates", stocks.len());
    }
    Ok(())
}
