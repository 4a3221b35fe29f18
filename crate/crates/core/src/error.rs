use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A model or experiment parameter is outside its domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Malformed or inconsistent input data (sample files, configurations).
    #[error("invalid data: {0}")]
    Data(String),

    /// An estimator has no data to work with.
    #[error("estimator `{estimator}` undefined: {reason}")]
    Estimation {
        estimator: &'static str,
        reason: String,
    },

    #[error("quadrature did not converge: {0}")]
    Numeric(String),

    #[error(
        "brute-force enumeration refused: {outputs}x{inputs} exceeds the {limit}x{limit} guard"
    )]
    TooLarge {
        outputs: usize,
        inputs: usize,
        limit: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// True for failures caused by the file system rather than by content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
            || matches!(self, Error::Csv { source, .. } if source.is_io_error())
    }
}
