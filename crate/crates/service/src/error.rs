use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use firetrace_core::federation::FederationError;
use firetrace_core::pipeline::PipelineError;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::auth::AuthError;
use crate::cases::CaseError;
use crate::detector::DetectorError;
use crate::reports::ReportError;

/// Error body returned by every endpoint: `{"error": <code>, "message": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl ToString) -> Self {
        ApiError { status: status.as_u16(), error: code.into(), message: message.to_string() }
    }

    pub fn bad_filter(message: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadFilter", message)
    }

    pub fn bad_request(message: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    pub fn not_found(code: &str, message: impl ToString) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn internal(message: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }

    pub fn status_code(&self) -> StatusCode {
        StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.error, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status_code(), Json(json!({"error": self.error, "message": self.message}))).into_response()
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        let (status, code) = match e {
            AuthError::BadCredentials => (StatusCode::UNAUTHORIZED, "BadCredentials"),
            AuthError::Locked => (StatusCode::LOCKED, "Locked"),
            AuthError::InvalidToken => (StatusCode::UNAUTHORIZED, "InvalidToken"),
            AuthError::Expired => (StatusCode::UNAUTHORIZED, "Expired"),
        };
        ApiError::new(status, code, e)
    }
}

impl From<ReportError> for ApiError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::NotOwner => ApiError::new(StatusCode::FORBIDDEN, "NotOwner", e),
            ReportError::UnknownReport(_) => ApiError::not_found("UnknownReport", e),
        }
    }
}

impl From<CaseError> for ApiError {
    fn from(e: CaseError) -> Self {
        let (status, code) = match e {
            CaseError::UnknownCase(_) => (StatusCode::NOT_FOUND, "UnknownCase"),
            CaseError::NotOwner => (StatusCode::FORBIDDEN, "NotOwner"),
            CaseError::InvalidTransition { .. } => (StatusCode::CONFLICT, "InvalidTransition"),
            CaseError::UnknownRecord(..) => (StatusCode::NOT_FOUND, "UnknownRecord"),
        };
        ApiError::new(status, code, e)
    }
}

impl From<DetectorError> for ApiError {
    fn from(e: DetectorError) -> Self {
        let code = match e {
            DetectorError::UnknownClass(_) => "UnknownClass",
            DetectorError::MalformedBox(_) => "MalformedBox",
            DetectorError::TooManyCandidates { .. } => "TooManyCandidates",
            DetectorError::UnorderedCandidates => "UnorderedCandidates",
            DetectorError::Empty(_) => "EmptyReport",
            DetectorError::InvalidConfidence(_) => "InvalidConfidence",
            DetectorError::MissingImageId => "MissingImageId",
        };
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, e)
    }
}

impl From<FederationError> for ApiError {
    fn from(e: FederationError) -> Self {
        let (status, code) = match e {
            FederationError::FieldDenied(_) => (StatusCode::FORBIDDEN, "FieldDenied"),
            FederationError::NoAccessibleStores => (StatusCode::FORBIDDEN, "NoAccessibleStores"),
            FederationError::PolicyDenied(_) => (StatusCode::FORBIDDEN, "PolicyDenied"),
            FederationError::UnknownStore(_) => (StatusCode::NOT_FOUND, "UnknownStore"),
            FederationError::DestinationUnreachable(_) => (StatusCode::BAD_GATEWAY, "DestinationUnreachable"),
            FederationError::MissingId => (StatusCode::BAD_REQUEST, "MissingId"),
            FederationError::IncompleteMapping(_) => (StatusCode::INTERNAL_SERVER_ERROR, "IncompleteMapping"),
            FederationError::UnhealthyStore(_) => (StatusCode::SERVICE_UNAVAILABLE, "UnhealthyStore"),
        };
        ApiError::new(status, code, e)
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::NoNetwork => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "NoNetwork", e),
            _ => ApiError::internal(e),
        }
    }
}
