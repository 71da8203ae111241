use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("feeder has no root bus 0")]
    MissingRoot,

    #[error("bus ids must be 0..N without gaps; id {0} is missing")]
    BusIdGap(usize),

    #[error("bus {0} is listed more than once")]
    DuplicateBus(usize),

    #[error("line {from}-{to} references unknown bus {bus}")]
    UnknownBus { from: usize, to: usize, bus: usize },

    #[error("line {from}-{to} connects a bus to itself")]
    SelfLoop { from: usize, to: usize },

    #[error("line {from}-{to} is listed more than once")]
    DuplicateLine { from: usize, to: usize },

    #[error("line {from}-{to} has nonpositive reactance {x}")]
    NonPositiveReactance { from: usize, to: usize, x: f64 },

    #[error("line {from}-{to} has invalid resistance {r}")]
    InvalidResistance { from: usize, to: usize, r: f64 },

    #[error("line {from}-{to}: {reason}")]
    InvalidLine { from: usize, to: usize, reason: String },

    #[error("bus {0} is not connected to the substation")]
    Disconnected(usize),

    #[error("feeder contains a cycle; a radial tree rooted at bus 0 is required")]
    NotRadial,

    #[error("invalid per-unit bases: {0}")]
    InvalidBases(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("eliminated block of the Bbus matrix is singular")]
    SingularBlock,

    #[error("Kron reduction needs at least one bus to keep")]
    EmptyKeepSet,

    #[error("bus {0} is not a row of this Bbus matrix")]
    NotInMatrix(usize),

    #[error("AC power flow did not converge within {sweeps} sweeps (last update {last_delta:e})")]
    PowerFlowNonConvergence { sweeps: usize, last_delta: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("inverter generation {p_gen} exceeds rating {rating}")]
    GenerationExceedsRating { p_gen: f64, rating: f64 },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("profile is missing bus {bus} at timestep {t}")]
    MissingProfileCell { t: usize, bus: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures caused by bad input rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::SingularBlock
                | Error::PowerFlowNonConvergence { .. }
                | Error::NonFinite(_)
        )
    }
}
