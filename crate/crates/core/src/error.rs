use std::fmt;

/// Errors raised by the simulator, the learner and the experiment harness.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration field holds a physically meaningless value.
    Config { field: String, message: String },
    /// An operation received an argument outside its domain.
    Domain(String),
    /// The event calendar is exhausted.
    EndOfSimulation,
    /// Training produced a non-finite loss or gradient.
    TrainingFault(String),
    /// Internal invariant broken; indicates a bug.
    Internal(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config { field, message } => write!(f, "invalid config field `{field}`: {message}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::EndOfSimulation => write!(f, "event calendar is empty"),
            Error::TrainingFault(msg) => write!(f, "training fault: {msg}"),
            Error::Internal(msg) => write!(f, "internal error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
