use thiserror::Error;

/// Errors raised by solvers, measure operations and configuration handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("exact transport limited to {cap} atom pairs (got {pairs}); request sliced mode")]
    ModeRequired { pairs: usize, cap: usize },

    #[error("stability bound violated: {bound} (measured {measured:.4e}, limit {limit:.4e})")]
    Stability {
        bound: &'static str,
        measured: f64,
        limit: f64,
    },

    #[error("divergence with kernel {kernel}: {detail}")]
    Divergence { kernel: String, detail: String },

    #[error("domain too small: boundary cells carry mass {boundary_mass:.3e} (> {tolerance:.1e})")]
    DomainTooSmall { boundary_mass: f64, tolerance: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("validation error at `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("step-size check failed: estimated error {estimate:.3e} exceeds {tolerance:.3e}")]
    StepCheck { estimate: f64, tolerance: f64 },

    #[error("{what} did not converge: residual {residual:.3e} above tolerance {tolerance:.3e}")]
    NotConverged {
        what: String,
        residual: f64,
        tolerance: f64,
    },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidMeasure(_) => "invalid_measure",
            Error::Grid(_) => "grid",
            Error::ModeRequired { .. } => "mode_required",
            Error::Stability { .. } => "stability",
            Error::Divergence { .. } => "divergence",
            Error::DomainTooSmall { .. } => "domain_too_small",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Validation { .. } => "validation",
            Error::StepCheck { .. } => "step_check",
            Error::NotConverged { .. } => "not_converged",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
