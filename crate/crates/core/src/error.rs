use std::fmt;
use std::io;

/// Errors produced anywhere in the library.
#[derive(Debug)]
pub enum Error {
    /// Operand extents do not conform.
    Shape(String),
    /// Input outside the domain of a function (e.g. log of a non-positive value).
    Domain(String),
    /// A NaN or infinity appeared; the message names where.
    Numeric(String),
    /// An operation was called in the wrong state (e.g. backward twice).
    State(String),
    /// A documented precondition was violated by the caller.
    Contract(String),
    /// Bad configuration value; names the offending field.
    Config(String),
    /// Malformed input data (CSV, JSON, labels).
    Data(String),
    /// Checkpoint could not be decoded or does not fit the expected model.
    Checkpoint(String),
    /// ROC/AUC is undefined because one class has zero total mass.
    UndefinedAuc(String),
    Io(io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "dimension error: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::State(m) => write!(f, "state error: {m}"),
            Error::Contract(m) => write!(f, "contract violation: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Checkpoint(m) => write!(f, "checkpoint error: {m}"),
            Error::UndefinedAuc(m) => write!(f, "undefined AUC: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Data(e.to_string())
    }
}
