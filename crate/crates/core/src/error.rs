use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("infeasible schedule: {0}")]
    InfeasibleSchedule(String),

    #[error("schedule fixed point did not converge after {iterations} iterations (last relative change {last_change:e})")]
    NonConvergent { iterations: usize, last_change: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric (‖H − Hᵀ‖_F = {asymmetry:e})")]
    NonSymmetric { asymmetry: f64 },

    #[error("iterate became non-finite at step {step}")]
    NonFinite { step: u64 },

    #[error("eigenvalue iteration did not converge in {iterations} iterations (estimate {estimate}, residual {residual:e})")]
    NotConverged {
        estimate: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("dimension {dim} exceeds the dense limit {limit}")]
    DimensionTooLarge { dim: usize, limit: usize },

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("run did not store its iterates and noise realizations")]
    MissingIterates,

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
