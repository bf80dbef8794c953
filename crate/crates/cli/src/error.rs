//! Error type with the stable exit-code contract.

use connectome_core::dmnc::DmncError;
use connectome_core::factors::FactorError;
use connectome_core::group_ica::GroupIcaError;
use connectome_core::ica::IcaError;
use connectome_core::io::IoError;
use connectome_core::market_data::MarketDataError;
use connectome_core::registry::RegistryError;
use connectome_core::synth::SynthError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration value or combination.
    #[error("config error: {0}")]
    Config(String),
    /// Missing or malformed input data.
    #[error("input error: {0}")]
    Input(String),
    /// A computation failed on valid input.
    #[error("computation failed: {0}")]
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Compute(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Input(m) | CliError::Compute(m) => m,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn ica_is_input(e: &IcaError) -> bool {
    matches!(e, IcaError::RankDeficient { .. } | IcaError::InvalidDimensions(_))
}

fn group_is_input(e: &GroupIcaError) -> bool {
    match e {
        GroupIcaError::WindowTooLong { .. } | GroupIcaError::InvalidParameter(_) => true,
        GroupIcaError::Ica(i) => ica_is_input(i),
        _ => false,
    }
}

fn registry_is_input(e: &RegistryError) -> bool {
    match e {
        RegistryError::UnknownAsset(_) | RegistryError::InvalidParameter(_) | RegistryError::EmptyReferenceSet => true,
        RegistryError::GroupIca(g) => group_is_input(g),
        _ => false,
    }
}

fn classify(input: bool, msg: String) -> CliError {
    if input {
        CliError::Input(msg)
    } else {
        CliError::Compute(msg)
    }
}

impl From<MarketDataError> for CliError {
    fn from(e: MarketDataError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match &e {
            IoError::GroupIca(g) => classify(group_is_input(g), e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<IcaError> for CliError {
    fn from(e: IcaError) -> Self {
        classify(ica_is_input(&e), e.to_string())
    }
}

impl From<GroupIcaError> for CliError {
    fn from(e: GroupIcaError) -> Self {
        classify(group_is_input(&e), e.to_string())
    }
}

impl From<RegistryError> for CliError {
    fn from(e: RegistryError) -> Self {
        classify(registry_is_input(&e), e.to_string())
    }
}

impl From<FactorError> for CliError {
    fn from(e: FactorError) -> Self {
        let input = match &e {
            FactorError::InvalidWindow { .. } | FactorError::InvalidWeights(_) | FactorError::DimensionMismatch(_) => {
                true
            }
            FactorError::Registry(r) => registry_is_input(r),
            _ => false,
        };
        classify(input, e.to_string())
    }
}

impl From<DmncError> for CliError {
    fn from(e: DmncError) -> Self {
        let input = match &e {
            DmncError::WindowTooLong { .. } | DmncError::InvalidParameter(_) | DmncError::KTooLarge { .. } => true,
            DmncError::Ica(i) => ica_is_input(i),
            _ => false,
        };
        classify(input, e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        let input = matches!(e, SynthError::InvalidParameter(_) | SynthError::InvalidSchedule(_));
        classify(input, e.to_string())
    }
}
