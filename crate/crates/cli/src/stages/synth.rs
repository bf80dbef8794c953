use connectome_core::io;
use connectome_core::synth::gen_bars;

use crate::config::RunConfig;
use crate::error::Result;
use crate::layout::Layout;

/// Write synthetic bars plus the planted mixing and sources. The bars file
/// has the input schema, so `input = <outdir>/synth/bars.csv` runs the
/// pipeline on it unchanged.
pub fn run(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let scenario = cfg.synth_scenario();
    let (bars, model) = gen_bars(&scenario)?;
    let dir = layout.stage("synth");
    io::write_bars(&dir.join("bars.csv"), &bars)?;
    io::write_matrix(&dir.join("mixing.csv"), &model.mixing)?;
    io::write_matrix(&dir.join("sources.csv"), &model.sources)?;
    log::info!(
        "synth: {} assets x {} days, {} sources",
        scenario.n_assets,
        scenario.n_days,
        scenario.n_sources
    );
    Ok(())
}
