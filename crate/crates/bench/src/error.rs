use thiserror::Error;

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("group `{group}` has {size} images; at least 5 are needed for a 4:1 split")]
    GroupTooSmall { group: String, size: usize },
    #[error("{metric}: {} test images lack a score or MOS (first: {})", ids.len(), ids[0])]
    MissingPairs { metric: String, ids: Vec<String> },
    #[error("the test set is empty")]
    EmptyTestSet,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] harmony_core::Error),
    #[error(transparent)]
    Model(#[from] harmony_model::ModelError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> BenchError {
    BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}
