pub mod assignment;
pub mod dmnc;
pub mod factors;
pub mod group_ica;
pub mod ica;
pub mod io;
pub mod market_data;
pub mod registry;
pub mod stats;
pub mod synth;
