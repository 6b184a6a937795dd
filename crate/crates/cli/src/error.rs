use std::fmt;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use pvss_core::camera_graph::GraphError;
use pvss_core::evaluator::EvalError;
use pvss_core::feature_index::IndexError;
use pvss_core::fusion_model::FusionError;
use pvss_core::pipeline::PipelineError;
use pvss_core::searcher::SearchError;
use pvss_core::synth_world::WorldError;
use pvss_core::track_store::StoreError;

/// Error classes shared by the command line (exit code) and the service
/// (HTTP status).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Usage,
    Invalid,
    NotFound,
    Conflict,
    Unavailable,
    Io,
    Internal,
}

impl ErrorKind {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorKind::Usage | ErrorKind::Invalid => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Conflict => StatusCode::CONFLICT,
            ErrorKind::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
            ErrorKind::Io | ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
pub struct AppError {
    pub kind: ErrorKind,
    pub message: String,
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl AppError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Usage, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::NotFound, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Conflict, message)
    }

    /// `{"error":{"kind":..,"message":..}}`, one line.
    pub fn json_line(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        (self.kind.status(), Json(serde_json::json!({ "error": self }))).into_response()
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        let kind = if e.kind() == std::io::ErrorKind::NotFound {
            ErrorKind::NotFound
        } else {
            ErrorKind::Io
        };
        Self::new(kind, e.to_string())
    }
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        let kind = match &e {
            StoreError::UnknownCamera(_) => ErrorKind::NotFound,
            StoreError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => ErrorKind::NotFound,
            StoreError::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Invalid,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<GraphError> for AppError {
    fn from(e: GraphError) -> Self {
        let kind = match &e {
            GraphError::UnknownCamera(_) | GraphError::UnknownEdge(..) => ErrorKind::NotFound,
            GraphError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => ErrorKind::NotFound,
            GraphError::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Invalid,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<IndexError> for AppError {
    fn from(e: IndexError) -> Self {
        let kind = match &e {
            IndexError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => ErrorKind::NotFound,
            IndexError::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Invalid,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<FusionError> for AppError {
    fn from(e: FusionError) -> Self {
        let kind = match &e {
            FusionError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => ErrorKind::NotFound,
            FusionError::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Invalid,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<WorldError> for AppError {
    fn from(e: WorldError) -> Self {
        match e {
            WorldError::Graph(g) => g.into(),
            WorldError::Store(s) => s.into(),
            WorldError::Io(io) => io.into(),
            other => Self::new(ErrorKind::Invalid, other.to_string()),
        }
    }
}

impl From<SearchError> for AppError {
    fn from(e: SearchError) -> Self {
        let kind = match &e {
            SearchError::UnknownCamera(_) | SearchError::UnknownTrack(_) => ErrorKind::NotFound,
            SearchError::IndexNotBuilt(_) | SearchError::MissingFusionParams => ErrorKind::Conflict,
            SearchError::Graph(GraphError::UnknownCamera(_)) => ErrorKind::NotFound,
            _ => ErrorKind::Invalid,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<EvalError> for AppError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Search(s) => s.into(),
            other => Self::new(ErrorKind::Invalid, other.to_string()),
        }
    }
}

impl From<PipelineError> for AppError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::World(x) => x.into(),
            PipelineError::Graph(x) => x.into(),
            PipelineError::Index(x) => x.into(),
            PipelineError::Fusion(x) => x.into(),
            PipelineError::Eval(x) => x.into(),
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;
