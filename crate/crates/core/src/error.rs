use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid header: {0}")]
    InvalidHeader(String),

    #[error("payload size mismatch: header implies {expected} values, payload holds {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("{count} non-finite values, first at flat index {first_index}")]
    NonFinite { count: usize, first_index: usize },

    #[error("extent mismatch: cube is {cube_height}x{cube_width}, ground truth is {gt_height}x{gt_width}")]
    ExtentMismatch {
        cube_height: usize,
        cube_width: usize,
        gt_height: usize,
        gt_width: usize,
    },

    #[error("invalid label {value} at pixel index {index}")]
    InvalidLabel { index: usize, value: f64 },

    #[error("unrecognized input format: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("class {class} has {count} patches, need at least 3 to populate train/val/test")]
    ClassTooSmall { class: usize, count: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("incompatible wiring on edge {edge}: {reason}")]
    Wiring { edge: String, reason: String },

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("training split is empty")]
    EmptySplit,

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),

    #[error("no results found under {0}")]
    NoResults(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// True for errors caused by the caller's configuration or inputs rather
    /// than by a failure while running.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::MissingFile(_)
                | Error::InvalidHeader(_)
                | Error::InvalidArgument(_)
                | Error::Json(_)
                | Error::Format(_)
                | Error::Wiring { .. }
                | Error::NoResults(_)
        )
    }
}
