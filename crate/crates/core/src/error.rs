use std::fmt;

/// Errors produced by the library.
#[derive(Debug)]
pub enum Error {
    /// Operand extents do not fit the operation.
    Shape {
        op: &'static str,
        detail: String,
    },
    /// An argument lies outside the domain of a function.
    Domain {
        what: &'static str,
        detail: String,
    },
    /// A computation produced NaN or infinity.
    NonFinite {
        context: String,
        index: Option<usize>,
    },
    /// Invalid configuration value.
    Config {
        key: String,
        constraint: String,
    },
    /// API used in the wrong order or with an inconsistent state.
    Usage(String),
    /// Training produced a non-finite loss or gradient; the model keeps its
    /// last good parameters.
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    /// Malformed input file.
    Parse {
        line: Option<usize>,
        msg: String,
    },
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn domain(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            constraint: constraint.into(),
        }
    }

    pub(crate) fn parse(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "shape mismatch in {op}: {detail}"),
            Error::Domain { what, detail } => write!(f, "domain error in {what}: {detail}"),
            Error::NonFinite {
                context,
                index: Some(i),
            } => write!(f, "non-finite value in {context} at index {i}"),
            Error::NonFinite {
                context,
                index: None,
            } => write!(f, "non-finite value in {context}"),
            Error::Config { key, constraint } => write!(f, "invalid '{key}': {constraint}"),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::Diverged {
                epoch,
                batch,
                detail,
            } => {
                write!(
                    f,
                    "training diverged at epoch {epoch}, minibatch {batch}: {detail}"
                )
            }
            Error::Parse { line: Some(l), msg } => write!(f, "parse error at line {l}: {msg}"),
            Error::Parse { line: None, msg } => write!(f, "parse error: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
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

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
