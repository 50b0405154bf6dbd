use std::fmt;

/// Errors produced by the simulator and the analysis routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Every parameter assigns zero likelihood to the observation.
    #[error("degenerate posterior: reward {reward} for action {action} is impossible under every parameter")]
    DegeneratePosterior { action: String, reward: f64 },

    /// An information ratio with a non-vanishing numerator over a vanishing
    /// denominator.
    #[error("estimator inconsistency: squared regret {numerator:e} over information {denominator:e}")]
    EstimatorInconsistency { numerator: f64, denominator: f64 },

    /// A contract that should hold by construction was violated. The message
    /// carries a reproducer dump.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("{0}")]
    Config(ConfigError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A user-facing configuration problem, located by field path and, when the
/// input was JSON text, by line and column.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error at `{}`", self.path)?;
        if let (Some(line), Some(col)) = (self.line, self.column) {
            write!(f, " (line {line}, column {col})")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config(ConfigError {
            path: path.into(),
            line: None,
            column: None,
            message: message.into(),
        })
    }
}

impl From<serde_path_to_error::Error<serde_json::Error>> for Error {
    fn from(e: serde_path_to_error::Error<serde_json::Error>) -> Self {
        let inner = e.inner();
        let located = inner.line() > 0;
        let mut message = inner.to_string();
        // serde_json appends its own position; ours is in the prefix
        if let Some(i) = message.rfind(" at line ") {
            if located {
                message.truncate(i);
            }
        }
        Error::Config(ConfigError {
            path: e.path().to_string(),
            line: located.then(|| inner.line()),
            column: located.then(|| inner.column()),
            message,
        })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
