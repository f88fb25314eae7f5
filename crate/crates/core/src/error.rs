//! Crate-wide error type with a stable mapping onto CLI exit codes.

use std::fmt;

/// Errors produced by the library and surfaced by the CLI.
#[derive(Debug)]
pub enum Error {
    /// Matrix or batch dimensions incompatible with the operation.
    Shape(String),
    /// Input violates a documented precondition or configuration constraint.
    Invalid(String),
    /// An iterative routine failed to converge, or training diverged.
    Numerical(String),
    /// A dataset or config file failed to parse.
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    /// Filesystem failure.
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for this error class: 1 validation/config,
    /// 2 numerical failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_) | Error::Invalid(_) | Error::Parse { .. } => 1,
            Error::Numerical(_) => 2,
            Error::Io { .. } => 3,
        }
    }

    /// Wraps an I/O failure with the path it happened on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Invalid(msg) => write!(f, "invalid input: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            Error::Parse {
                path,
                line,
                message,
            } => write!(f, "parse error at {path}:{line}: {message}"),
            Error::Io { path, source } => write!(f, "io error on {path}: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_cli_contract() {
        assert_eq!(Error::Shape("x".into()).exit_code(), 1);
        assert_eq!(Error::Invalid("x".into()).exit_code(), 1);
        assert_eq!(
            Error::Parse {
                path: "p".into(),
                line: 3,
                message: "m".into()
            }
            .exit_code(),
            1
        );
        assert_eq!(Error::Numerical("x".into()).exit_code(), 2);
        assert_eq!(Error::io("p", std::io::Error::other("d")).exit_code(), 3);
    }
}
