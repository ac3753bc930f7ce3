use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Order parameters are undefined (zero-radius ball or zero dispersion).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no root of the {kind} maximal NPV{}: {reason}", .maturity.map(|t| format!(" at T={t}")).unwrap_or_default())]
    NoRoot {
        kind: &'static str,
        maturity: Option<u32>,
        reason: String,
    },

    #[error("iteration cap of {iterations} reached without convergence (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: line {line}: {message}")]
    Format {
        path: String,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::Dimension { .. }
            | Error::Config(_)
            | Error::Format { .. }
            | Error::Io(_) => 2,
            Error::NoRoot { .. } => 3,
            Error::Degenerate(_) | Error::NonConvergence { .. } | Error::Invariant(_) => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
