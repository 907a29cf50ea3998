//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors produced by the pipeline.
///
/// The variants map onto the process exit codes used by the command-line
/// driver: input problems exit with 1, broken internal invariants with 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The caller handed over data that violates a documented precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// A file could not be read, written or parsed.
    #[error("{path}: {reason}")]
    File { path: PathBuf, reason: String },

    /// An error raised while processing a specific frame.
    #[error("frame {frame}: {source}")]
    Frame {
        frame: u64,
        #[source]
        source: Box<Error>,
    },

    /// An internal invariant did not hold.
    #[error("internal assertion failed: {0}")]
    Internal(String),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn file(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::File {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub fn in_frame(self, frame: u64) -> Self {
        match self {
            e @ Error::Frame { .. } => e,
            e => Error::Frame {
                frame,
                source: Box::new(e),
            },
        }
    }

    /// Process exit code for this error: 2 for internal assertions, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Internal(_) => 2,
            Error::Frame { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Error::input("x").exit_code(), 1);
        assert_eq!(Error::file("a.png", "bad").exit_code(), 1);
        assert_eq!(Error::Internal("x".into()).exit_code(), 2);
        assert_eq!(Error::Internal("x".into()).in_frame(3).exit_code(), 2);
    }

    #[test]
    fn frame_context_is_not_nested() {
        let e = Error::input("x").in_frame(3).in_frame(4);
        assert_eq!(e.to_string(), "frame 3: invalid input: x");
    }
}
