//! Batch front end: configuration, seeds, exit codes and pipeline stages.

pub mod config;
pub mod error;
pub mod layout;
pub mod seeds;
pub mod stages;

use config::RunConfig;
use error::{CliError, Result};
use layout::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Features,
    Gica,
    Factors,
    Dmnc,
    Regimes,
    Report,
}

impl Stage {
    /// Analysis stages in dependency order (`synth` is separate).
    pub const PIPELINE: [Stage; 6] = [
        Stage::Features,
        Stage::Gica,
        Stage::Factors,
        Stage::Dmnc,
        Stage::Regimes,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Features => "features",
            Stage::Gica => "gica",
            Stage::Factors => "factors",
            Stage::Dmnc => "dmnc",
            Stage::Regimes => "regimes",
            Stage::Report => "report",
        }
    }

    fn run(self, cfg: &RunConfig, layout: &Layout) -> Result<()> {
        match self {
            Stage::Synth => stages::synth::run(cfg, layout),
            Stage::Features => stages::features::run(cfg, layout),
            Stage::Gica => stages::gica::run(cfg, layout),
            Stage::Factors => stages::factors::run(cfg, layout),
            Stage::Dmnc => stages::dmnc::run(cfg, layout),
            Stage::Regimes => stages::regimes::run(cfg, layout),
            Stage::Report => stages::report::run(cfg, layout),
        }
    }
}

/// Validate the config and run `stages` in order on a pool of
/// `cfg.threads` workers.
pub fn execute(cfg: &RunConfig, stages: &[Stage]) -> Result<()> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(format!("threads = {}: {e}", cfg.threads)))?;
    let layout = Layout::new(&cfg.outdir);
    pool.install(|| {
        for stage in stages {
            log::info!("stage {}", stage.name());
            stage.run(cfg, &layout)?;
        }
        Ok(())
    })
}

pub fn cmd_features(cfg: &RunConfig) -> Result<()> {
    execute(cfg, &[Stage::Features])
}

pub fn cmd_gica(cfg: &RunConfig) -> Result<()> {
    execute(cfg, &[Stage::Gica])
}

pub fn cmd_factors(cfg: &RunConfig) -> Result<()> {
    execute(cfg, &[Stage::Factors])
}

pub fn cmd_dmnc(cfg: &RunConfig) -> Result<()> {
    execute(cfg, &[Stage::Dmnc])
}

pub fn cmd_regimes(cfg: &RunConfig) -> Result<()> {
    execute(cfg, &[Stage::Regimes])
}

pub fn cmd_report(cfg: &RunConfig) -> Result<()> {
    execute(cfg, &[Stage::Report])
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    execute(cfg, &[Stage::Synth])
}

/// Every analysis stage, `features` through `report`.
pub fn cmd_run(cfg: &RunConfig) -> Result<()> {
    execute(cfg, &Stage::PIPELINE)
}
