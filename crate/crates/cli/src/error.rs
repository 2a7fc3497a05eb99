use std::path::Path;

use gs4d::Error;

/// Exit codes are a stable contract.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_CORRUPT: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Corrupt(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Corrupt(_) => EXIT_CORRUPT,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    /// Prefixes the message with the offending path.
    pub fn at(self, path: &Path) -> Self {
        let p = path.display();
        match self {
            CliError::Input(m) => CliError::Input(format!("{p}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{p}: {m}")),
            CliError::Corrupt(m) => CliError::Corrupt(format!("{p}: {m}")),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Decode(d) => CliError::Corrupt(format!("malformed stream: {d:?}")),
            Error::NonFiniteEnergy { .. }
            | Error::NonFinite { .. }
            | Error::SingularSystem { .. }
            | Error::DegenerateBlend { .. }
            | Error::ZeroQuaternion
            | Error::NotOrthonormal { .. } => CliError::Numeric(msg),
            _ => CliError::Input(msg),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(format!("csv: {e}"))
    }
}
