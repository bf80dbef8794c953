use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use connectome_cli::config::{defaults_help, RunConfig, SEED_ENV};
use connectome_cli::{execute, Stage};

#[derive(Parser)]
#[command(
    name = "connectome",
    version,
    about = "Financial connectome pipeline: group ICA market modules, risk factors and dynamic connectivity",
    after_help = defaults_help(),
)]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean bars and build rolling feature panels.
    Features,
    /// Group ICA with consensus per era and window length.
    Gica,
    /// Risk-On/Risk-Off factor series and the risk-shift curve.
    Factors,
    /// Dynamic connectivity tensors and network metrics.
    Dmnc,
    /// Cluster connectivity windows into regimes.
    Regimes,
    /// Collate the JSON + CSV report bundle.
    Report,
    /// Generate synthetic bars with a planted mixing.
    Synth,
    /// Run features through report.
    Run,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let stages: &[Stage] = match cli.command {
        Command::Features => &[Stage::Features],
        Command::Gica => &[Stage::Gica],
        Command::Factors => &[Stage::Factors],
        Command::Dmnc => &[Stage::Dmnc],
        Command::Regimes => &[Stage::Regimes],
        Command::Report => &[Stage::Report],
        Command::Synth => &[Stage::Synth],
        Command::Run => &Stage::PIPELINE,
    };
    let result = match &cli.config {
        Some(path) => RunConfig::from_file(path),
        None => Ok(RunConfig::default()),
    }
    .and_then(|cfg| cfg.with_overrides(&cli.set, std::env::var(SEED_ENV).ok()))
    .and_then(|cfg| execute(&cfg, stages));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("connectome: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
