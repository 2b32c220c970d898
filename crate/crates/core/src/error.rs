use thiserror::Error;

/// Errors raised by the model-fitting, criterion and small-area layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmmError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{what} is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { what: &'static str, asymmetry: f64 },

    #[error("{what} is not positive definite (smallest eigenvalue estimate {min_eigenvalue:.3e})")]
    NotPositiveDefinite { what: &'static str, min_eigenvalue: f64 },

    #[error("{what} is rank deficient: rank {rank} < {cols} columns")]
    RankDeficient {
        what: String,
        rank: usize,
        cols: usize,
    },

    #[error("invalid candidate model: {0}")]
    InvalidCandidate(String),

    #[error("degenerate fit: response lies in the column space of the candidate design")]
    DegenerateFit,

    #[error("insufficient degrees of freedom: {0}")]
    InsufficientDegreesOfFreedom(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bootstrap rejected {rejected} of {replications} resamples (limit 1%)")]
    BootstrapRejections { rejected: usize, replications: usize },

    #[error("invalid small-area data: {0}")]
    InvalidData(String),

    #[error("area {area} is fully sampled; area-level target undefined")]
    AreaFullySampled { area: String },

    #[error("simulation failed: {0}")]
    Simulation(String),
}

pub type Result<T> = std::result::Result<T, LmmError>;
