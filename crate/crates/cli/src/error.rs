/// Error class; each maps to a distinct process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad flags, missing fields, unreadable config.
    Usage,
    /// Inputs exist but are inconsistent or malformed.
    Validation,
    /// A solver or training run failed numerically.
    Numeric,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Validation => 3,
            ErrorKind::Numeric => 4,
            ErrorKind::Io => 5,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Usage, message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Validation, message)
    }

    pub fn missing(field: &str, flag: &str) -> Self {
        Self::usage(format!(
            "missing required field `{field}` (pass {flag} or set it in the config file)"
        ))
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl From<qdarray_core::Error> for CliError {
    fn from(e: qdarray_core::Error) -> Self {
        use qdarray_core::Error as E;
        let kind = match &e {
            E::NotConverged { .. }
            | E::TooManyIslands { .. }
            | E::EmptyIsland { .. }
            | E::DisconnectedChain { .. }
            | E::SamplingFailed { .. } => ErrorKind::Numeric,
            E::Io(io) if io.kind() != std::io::ErrorKind::NotFound => ErrorKind::Io,
            _ => ErrorKind::Validation,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<qdarray_nn::Error> for CliError {
    fn from(e: qdarray_nn::Error) -> Self {
        use qdarray_nn::Error as E;
        let kind = match &e {
            E::Diverged { .. } => ErrorKind::Numeric,
            E::Io(io) if io.kind() != std::io::ErrorKind::NotFound => ErrorKind::Io,
            _ => ErrorKind::Validation,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<qdarray_tune::Error> for CliError {
    fn from(e: qdarray_tune::Error) -> Self {
        match e {
            qdarray_tune::Error::Simulation(e) => e.into(),
            qdarray_tune::Error::Network(e) => e.into(),
            qdarray_tune::Error::Io(e) => e.into(),
            other => Self::validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        let kind = match e.kind() {
            std::io::ErrorKind::NotFound => ErrorKind::Validation,
            _ => ErrorKind::Io,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::validation(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Prefix an error message with what was being done.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: Into<CliError>> Context<T> for std::result::Result<T, E> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| {
            let e = e.into();
            CliError::new(e.kind, format!("{}: {}", what(), e.message))
        })
    }
}
