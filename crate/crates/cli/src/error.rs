use caishift::LmmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or inconsistent input.
    #[error("{0}")]
    Input(String),

    /// Valid input that leaves nothing to report.
    #[error("{0}")]
    Degenerate(String),

    #[error(transparent)]
    Model(#[from] LmmError),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 input error, 2 empty or degenerate result, 3 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) | CliError::Io { .. } => 1,
            CliError::Degenerate(_) => 2,
            CliError::Model(e) => match e {
                LmmError::Dimension(_)
                | LmmError::InvalidCandidate(_)
                | LmmError::InvalidConfig(_)
                | LmmError::InvalidData(_)
                | LmmError::AreaFullySampled { .. } => 1,
                LmmError::RankDeficient { .. }
                | LmmError::DegenerateFit
                | LmmError::InsufficientDegreesOfFreedom(_) => 2,
                LmmError::NotSymmetric { .. }
                | LmmError::NotPositiveDefinite { .. }
                | LmmError::BootstrapRejections { .. }
                | LmmError::Simulation(_) => 3,
            },
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
