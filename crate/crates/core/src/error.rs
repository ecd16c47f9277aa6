use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid speed {0} m/s (must be > 0)")]
    InvalidSpeed(f64),
    #[error("road nodes {from} and {to} are not connected")]
    DisconnectedNetwork { from: usize, to: usize },
    #[error("scenario generation failed: {0}")]
    GenerationFailure(String),
    #[error("infeasible: task {task} {reason}")]
    Infeasible { task: usize, reason: String },
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("instance too large for exhaustive search: {0}")]
    SizeLimit(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("format version {found} not supported (expected major {expected})")]
    VersionMismatch { found: String, expected: u32 },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-parsable tag used by the command line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSpeed(_) => "invalid-speed",
            Error::DisconnectedNetwork { .. } => "disconnected-network",
            Error::GenerationFailure(_) => "generation-failure",
            Error::Infeasible { .. } => "infeasible",
            Error::ContractViolation(_) => "contract-violation",
            Error::Validation(_) => "validation",
            Error::SizeLimit(_) => "size-limit",
            Error::Unsupported(_) => "unsupported",
            Error::NonFinite(_) => "non-finite",
            Error::VersionMismatch { .. } => "version-mismatch",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
