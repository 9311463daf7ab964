use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use shelfid_core::embedding::ProviderError;
use shelfid_core::pipeline::PipelineError;
use shelfid_core::registry::RegistryError;

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    Validation,
    Unauthorized,
    NotFound,
    UnknownSku,
    UnknownFlag,
    DuplicateSku,
    FlagNotOpen,
    MethodNotAllowed,
    PayloadTooLarge,
    DetectorFailure,
    ProviderFailure,
    IoFailure,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            Self::BadRequest | Self::Validation => StatusCode::BAD_REQUEST,
            Self::Unauthorized => StatusCode::UNAUTHORIZED,
            Self::NotFound | Self::UnknownSku | Self::UnknownFlag => StatusCode::NOT_FOUND,
            Self::DuplicateSku | Self::FlagNotOpen => StatusCode::CONFLICT,
            Self::MethodNotAllowed => StatusCode::METHOD_NOT_ALLOWED,
            Self::PayloadTooLarge => StatusCode::PAYLOAD_TOO_LARGE,
            Self::DetectorFailure | Self::ProviderFailure => StatusCode::UNPROCESSABLE_ENTITY,
            Self::IoFailure | Self::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            body: ErrorBody {
                code,
                message: message.into(),
                details: None,
            },
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.body.details = Some(details);
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Validation, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::IoFailure, message)
    }

    pub fn code(&self) -> ErrorCode {
        self.body.code
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.body.code.status(), Json(self.body)).into_response()
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let code = match &e {
            RegistryError::DuplicateSku(_) => ErrorCode::DuplicateSku,
            RegistryError::UnknownSku(_) => ErrorCode::UnknownSku,
            RegistryError::UnknownFlagId(_) => ErrorCode::UnknownFlag,
            RegistryError::FlagNotOpen(_) => ErrorCode::FlagNotOpen,
            RegistryError::EmptyReferences(_)
            | RegistryError::Validation(_)
            | RegistryError::Embedding(_)
            | RegistryError::Index(_) => ErrorCode::Validation,
            RegistryError::Io(_) | RegistryError::Document(_) => ErrorCode::IoFailure,
        };
        Self::new(code, e.to_string())
    }
}

impl From<ProviderError> for ApiError {
    fn from(e: ProviderError) -> Self {
        Self::new(ErrorCode::ProviderFailure, e.to_string())
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Registry(r) => r.into(),
            PipelineError::Detector(d) => Self::new(ErrorCode::DetectorFailure, d.to_string()),
            PipelineError::EmptyImage => Self::bad_request(e.to_string()),
            PipelineError::PatchStore(io) => Self::io(format!("patch store failed: {io}")),
            PipelineError::DimMismatch { .. } | PipelineError::Crop(_) | PipelineError::Provider(_) => {
                Self::new(ErrorCode::ProviderFailure, e.to_string())
            }
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            return Self::new(ErrorCode::PayloadTooLarge, e.body_text());
        }
        Self::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(e: PathRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

/// Replaces a bare non-2xx response (router 404/405, body limit, panics)
/// with an `ErrorBody`.
pub fn ensure_error_body(resp: Response) -> Response {
    let status = resp.status();
    let is_json = resp
        .headers()
        .get(axum::http::header::CONTENT_TYPE)
        .is_some_and(|v| v.as_bytes().starts_with(b"application/json"));
    if status.is_success() || status.is_redirection() || is_json || status == StatusCode::NOT_MODIFIED {
        return resp;
    }
    let code = match status {
        StatusCode::NOT_FOUND => ErrorCode::NotFound,
        StatusCode::METHOD_NOT_ALLOWED => ErrorCode::MethodNotAllowed,
        StatusCode::PAYLOAD_TOO_LARGE => ErrorCode::PayloadTooLarge,
        StatusCode::UNAUTHORIZED => ErrorCode::Unauthorized,
        s if s.is_client_error() => ErrorCode::BadRequest,
        _ => ErrorCode::Internal,
    };
    let message = status.canonical_reason().unwrap_or("request failed").to_string();
    let mut out = (status, Json(ErrorBody { code, message, details: None })).into_response();
    for (k, v) in resp.headers() {
        if k != axum::http::header::CONTENT_TYPE && k != axum::http::header::CONTENT_LENGTH {
            out.headers_mut().insert(k.clone(), v.clone());
        }
    }
    out
}
