use std::fmt;

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad flag or flag value (exit 2).
    Usage,
    /// Unreadable, malformed, or invalid input data (exit 3).
    Data,
    /// Non-convergence, singular matrices, or too many dropped replicates (exit 4).
    Diagnostic,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
            ErrorKind::Diagnostic => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Diagnostic => "diagnostic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppError {
    pub kind: ErrorKind,
    pub message: String,
}

impl AppError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Data, message: message.into() }
    }

    pub fn diagnostic(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Diagnostic, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// Prefixes the message, keeping the kind.
    pub fn context(self, what: impl fmt::Display) -> Self {
        Self { kind: self.kind, message: format!("{what}: {}", self.message) }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for AppError {}

impl From<svyboot_core::Error> for AppError {
    fn from(e: svyboot_core::Error) -> Self {
        use svyboot_core::Error as E;
        let kind = match e {
            E::SingularInformation { .. }
            | E::SingularVariance
            | E::NotConverged { .. }
            | E::TooManyDropped { .. }
            | E::TooManyExclusions { .. } => ErrorKind::Diagnostic,
            E::InvalidInput(_)
            | E::EmptyData
            | E::DimensionMismatch { .. }
            | E::ZeroEstimatedCell(_)
            | E::ZeroMargin(_)
            | E::UndefinedDesignEffect(_)
            | E::Unsupported(_) => ErrorKind::Data,
        };
        Self { kind, message: e.to_string() }
    }
}

impl From<csv::Error> for AppError {
    fn from(e: csv::Error) -> Self {
        AppError::data(e.to_string())
    }
}

pub type AppResult<T> = Result<T, AppError>;
