//! JSON and query extractors whose rejections name the offending field.

use axum::body::Bytes;
use axum::extract::{FromRequest, FromRequestParts, Request};
use axum::http::request::Parts;
use serde::de::DeserializeOwned;

use crate::error::ApiError;

pub struct ApiJson<T>(pub T);

pub struct ApiQuery<T>(pub T);

/// Field path from a path-tracking error, falling back to the name in a
/// "missing field" message, then to `fallback`.
fn field_of<E: std::fmt::Display>(err: &serde_path_to_error::Error<E>, fallback: &str) -> String {
    let path = err.path().to_string();
    if path != "." && !path.is_empty() {
        return path;
    }
    let msg = err.inner().to_string();
    msg.strip_prefix("missing field `")
        .and_then(|rest| rest.split('`').next())
        .map_or_else(|| fallback.to_owned(), str::to_owned)
}

impl<S, T> FromRequest<S> for ApiJson<T>
where
    S: Send + Sync,
    T: DeserializeOwned,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::validation("body", e.body_text()))?;
        parse_json(&bytes).map(ApiJson)
    }
}

/// Deserializes a JSON body, reporting the failing field.
pub fn parse_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(&mut de)
        .map_err(|e| ApiError::validation(&field_of(&e, "body"), e.inner().to_string()))
}

impl<S, T> FromRequestParts<S> for ApiQuery<T>
where
    S: Send + Sync,
    T: DeserializeOwned,
{
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _state: &S) -> Result<Self, Self::Rejection> {
        let query = parts.uri.query().unwrap_or("");
        let de = serde_urlencoded::Deserializer::new(form_urlencoded::parse(query.as_bytes()));
        match serde_path_to_error::deserialize(de) {
            Ok(v) => Ok(ApiQuery(v)),
            Err(e) => Err(ApiError::validation(&field_of(&e, "query"), e.inner().to_string())),
        }
    }
}
