use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh has no faces")]
    EmptyMesh,

    #[error("query point has non-finite coordinates")]
    NonFinite,

    #[error("face {0} has zero area")]
    DegenerateFace(usize),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),

    #[error("tape was recorded against weights version {recorded}, current is {current}")]
    StaleTape { recorded: u64, current: u64 },

    #[error("coefficient covariance is not positive semi-definite")]
    NotPositiveSemiDefinite,

    #[error("numeric abort: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("template hash mismatch: file was written for {expected}, supplied template is {found}")]
    TemplateMismatch { expected: String, found: String },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numeric(_) => 4,
            _ => 3,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }

    pub(crate) fn at_path(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Path { path, source }
    }
}
