use std::io;

/// Errors produced by every stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("corrupt index: {0}")]
    CorruptIndex(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset: offset as u64,
            message: msg.into(),
        }
    }
}

impl Error {
    /// Prefixes the message with the pipeline stage that failed, keeping the
    /// variant.
    pub fn in_stage(self, stage: &str) -> Error {
        match self {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{stage}: {m}")),
            Error::Format { offset, message } => Error::Format {
                offset,
                message: format!("{stage}: {message}"),
            },
            Error::CorruptIndex(m) => Error::CorruptIndex(format!("{stage}: {m}")),
            Error::NotFound(m) => Error::NotFound(format!("{stage}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("{stage}: {m}")),
            Error::Internal(m) => Error::Internal(format!("{stage}: {m}")),
            Error::Io(e) => Error::Io(io::Error::new(e.kind(), format!("{stage}: {e}"))),
            Error::Json(e) => Error::Json(e),
        }
    }
}
