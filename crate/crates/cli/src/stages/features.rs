use std::path::Path;

use connectome_core::io;
use connectome_core::market_data::{
    clean_panel, feature_panel, segment_eras, AssetPanel, BarField, DailyBar, FeatureKind, RawPanel,
};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::layout::{Layout, Universe};

/// Cleaned prices, daily log returns and one feature panel per window length.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub prices: AssetPanel,
    pub returns: AssetPanel,
    pub panels: Vec<AssetPanel>,
}

pub fn build(bars: &[DailyBar], kind: FeatureKind, windows: &[usize]) -> Result<FeatureSet> {
    let prices = clean_panel(&RawPanel::from_bars(bars, BarField::AdjClose))?;
    let volumes = match kind {
        FeatureKind::Vwap => Some(clean_panel(&RawPanel::from_bars(bars, BarField::Volume))?),
        _ => None,
    };
    let returns = feature_panel(&prices, None, FeatureKind::RawLogRet, 1)?;
    let panels = windows
        .iter()
        .map(|&w| feature_panel(&prices, volumes.as_ref(), kind, w))
        .collect::<std::result::Result<_, _>>()?;
    Ok(FeatureSet {
        prices,
        returns,
        panels,
    })
}

fn universe(cfg: &RunConfig, layout: &Layout, input: &Path, u: Universe) -> Result<()> {
    let bars = io::read_bars(input)?;
    let set = build(&bars, cfg.feature, &cfg.windows)?;
    // Fail early on eras the data does not cover.
    segment_eras(&set.returns, &cfg.eras)?;
    for (w, panel) in cfg.windows.iter().zip(&set.panels) {
        segment_eras(panel, &cfg.eras)?;
        io::write_panel(&layout.panel(u, *w), panel)?;
    }
    io::write_panel(&layout.prices(u), &set.prices)?;
    io::write_panel(&layout.returns(u), &set.returns)?;
    log::info!(
        "features: {} assets x {} dates from {}",
        set.prices.n_assets(),
        set.prices.n_dates(),
        input.display()
    );
    Ok(())
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let input = cfg
        .input
        .as_deref()
        .ok_or_else(|| CliError::Config("`input` is not set".into()))?;
    universe(cfg, layout, input, Universe::Stocks)?;
    if let Some(etf) = cfg.etf_input.as_deref() {
        universe(cfg, layout, etf, Universe::Etfs)?;
    }
    Ok(())
}
