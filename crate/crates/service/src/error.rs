use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{0}` has expired")]
    Expired(String),
    #[error("expected a rating for `{expected}`, got `{got}`")]
    OutOfOrder { expected: String, got: String },
    #[error("`{image_id}` was already rated {previous}")]
    AlreadyRated { image_id: String, previous: u8 },
    #[error("session `{0}` is complete")]
    Complete(String),
    #[error("rating {0} is outside 1..=5")]
    RatingRange(i64),
    #[error("invalid subject id: {0}")]
    InvalidSubject(String),
    #[error("no image `{image_id}` with role `{role}`")]
    UnknownImage { image_id: String, role: String },
    #[error("stored session data is inconsistent: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] harmony_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> ServiceError {
    ServiceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        use ServiceError::*;
        match self {
            UnknownSession(_) | UnknownImage { .. } => StatusCode::NOT_FOUND,
            Expired(_) => StatusCode::GONE,
            OutOfOrder { .. } | AlreadyRated { .. } | Complete(_) => StatusCode::CONFLICT,
            RatingRange(_) | InvalidSubject(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Corrupt(_) | Io { .. } | Data(_) | Json(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    /// Short machine-readable tag for clients.
    pub fn code(&self) -> &'static str {
        use ServiceError::*;
        match self {
            UnknownSession(_) => "unknown_session",
            Expired(_) => "session_expired",
            OutOfOrder { .. } => "out_of_order",
            AlreadyRated { .. } => "already_rated",
            Complete(_) => "session_complete",
            RatingRange(_) => "rating_out_of_range",
            InvalidSubject(_) => "invalid_subject",
            UnknownImage { .. } => "unknown_image",
            Corrupt(_) | Io { .. } | Data(_) | Json(_) => "storage",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        let mut body = json!({ "error": self.code(), "message": self.to_string() });
        if let ServiceError::OutOfOrder { expected, .. } = &self {
            body["expected_image_id"] = json!(expected);
        }
        (status, Json(body)).into_response()
    }
}
