use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate image_id `{0}` in manifest")]
    DuplicateImageId(String),

    #[error("entry `{image_id}`: iha `{iha_name}` belongs to subset {expected}, not {found}")]
    SubsetMismatch {
        image_id: String,
        iha_name: String,
        expected: String,
        found: String,
    },

    #[error("unsupported bit depth in {path}: {detail}")]
    UnsupportedBitDepth { path: PathBuf, detail: String },

    #[error("failed to decode {path}: {detail}")]
    Decode { path: PathBuf, detail: String },

    #[error("invalid image buffer: {0}")]
    InvalidImage(String),

    #[error("dimension mismatch: {left:?} vs {right:?} (width, height, channels)")]
    DimensionMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },

    #[error("image {width}x{height} is too small: {requirement}")]
    TooSmall {
        width: usize,
        height: usize,
        requirement: String,
    },

    #[error("expected a single-channel image, got {0} channels")]
    NotGray(usize),

    #[error("unknown metric `{0}`")]
    UnknownMetric(String),

    #[error("invalid rating {rating} for image `{image_id}` (must be 1..=5)")]
    RatingOutOfRange { image_id: String, rating: i64 },

    #[error("subject `{subject_id}` rated image `{image_id}` more than once")]
    DuplicateRating { subject_id: String, image_id: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
