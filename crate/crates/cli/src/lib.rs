//! Configuration parsing and run orchestration for the `nucpol` binary.

pub mod config;
pub mod run;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Cap(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Io(_) => 1,
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::Cap(_) => 4,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Cap(_) => "cap_exceeded",
            Self::Numerical(_) => "numerical",
            Self::Io(_) => "io",
        }
    }
}

impl From<nucpol::Error> for CliError {
    fn from(e: nucpol::Error) -> Self {
        use nucpol::Error as E;
        match e {
            E::Domain(_) | E::Validation(_) => Self::Config(e.to_string()),
            E::CapExceeded { .. } => Self::Cap(e.to_string()),
            E::Numerical { .. } | E::Underflow { .. } | E::Inconsistent(_) => {
                Self::Numerical(e.to_string())
            }
        }
    }
}
