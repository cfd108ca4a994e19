use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use hearth_core::HouseholdError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    /// Stable class: `stage_gate`, `validation`, `not_found`, `conflict`,
    /// `unavailable`, `unauthorized` or `internal`.
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_stage: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_stage: Option<u8>,
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error(transparent)]
    Household(#[from] HouseholdError),
    #[error("missing or wrong admin token")]
    Unauthorized,
}

impl ApiError {
    pub fn validation(field: &str, message: impl Into<String>) -> Self {
        Self::Household(HouseholdError::validation(field, message))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::Household(HouseholdError::Internal(message.into()))
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::Household(e) => match e {
                HouseholdError::StageGate(_) => StatusCode::LOCKED,
                HouseholdError::Validation { .. } => StatusCode::BAD_REQUEST,
                HouseholdError::NotFound(_) => StatusCode::NOT_FOUND,
                HouseholdError::Conflict(_) => StatusCode::CONFLICT,
                HouseholdError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
                HouseholdError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            },
        }
    }

    pub fn body(&self) -> ErrorBody {
        let mut body = ErrorBody {
            error: match self {
                ApiError::Unauthorized => "unauthorized",
                ApiError::Household(e) => e.code(),
            }
            .to_owned(),
            message: self.to_string(),
            field: None,
            feature: None,
            required_stage: None,
            current_stage: None,
        };
        match self {
            ApiError::Household(HouseholdError::Validation { field, .. }) => body.field = Some(field.clone()),
            ApiError::Household(HouseholdError::StageGate(g)) => {
                body.feature = Some(g.feature.to_string());
                body.required_stage = Some(g.required_stage.number());
                body.current_stage = Some(g.current_stage.number());
            }
            _ => {}
        }
        body
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::warn!(error = %self, "request failed");
        }
        (status, Json(self.body())).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
