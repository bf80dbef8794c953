//! One module per subcommand. Every stage reads its inputs from disk and
//! writes under `<outdir>/<stage>/`.

pub mod dmnc;
pub mod factors;
pub mod features;
pub mod gica;
pub mod regimes;
pub mod report;
pub mod synth;
