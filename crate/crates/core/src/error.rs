use thiserror::Error;

use crate::cces::CcesError;
use crate::config::ConfigError;
use crate::density::DensityError;
use crate::geo::GeoError;
use crate::ingest::IngestError;
use crate::radiusscan::RadiusError;
use crate::regress::RegressError;
use crate::shrink::ShrinkError;
use crate::spells::SpellError;
use crate::synth::SynthError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error, wrapping the per-module errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Spell(#[from] SpellError),
    #[error(transparent)]
    Radius(#[from] RadiusError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Shrink(#[from] ShrinkError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Cces(#[from] CcesError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable name of the failing module and variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(e) => match e {
                ConfigError::MissingKey(_) => "config.missing_key",
                ConfigError::InvalidValue { .. } => "config.invalid_value",
                ConfigError::Syntax { .. } => "config.syntax",
                ConfigError::Io { .. } => "config.io",
            },
            Error::Geo(_) => "geo",
            Error::Ingest(e) => e.kind(),
            Error::Spell(_) => "spells",
            Error::Radius(_) => "radiusscan",
            Error::Regress(_) => "regress",
            Error::Shrink(_) => "shrink",
            Error::Density(_) => "density",
            Error::Cces(_) => "cces",
            Error::Synth(_) => "synth",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
