//! Blocking HTTP client for the gateway API and the error-to-exit-code map.

use std::path::PathBuf;
use std::process::ExitCode;

use reqwest::blocking::{Client as Http, RequestBuilder, Response};
use reqwest::Method;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

pub const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  unexpected failure (I/O, server error, malformed response)
  2  usage error
  3  gateway unreachable (connection refused)
  4  validation failure
  5  feature locked at the current stage
  6  not found
  7  unauthorized (missing or wrong admin token)
  8  conflict
  9  gateway temporarily unavailable

Errors are printed to stderr as a single line of JSON with at least
`error` and `message` keys.";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot reach the gateway at {url}: {source}")]
    Connect { url: String, source: reqwest::Error },
    /// A structured error body returned by the gateway.
    #[error("{}", body["message"].as_str().unwrap_or("request failed"))]
    Api { status: u16, body: Value },
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] hearth_gateway::ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("server failed: {0}")]
    Serve(#[from] hearth_gateway::ServeError),
}

impl CliError {
    pub fn code(&self) -> &str {
        match self {
            Self::Connect { .. } => "connection_refused",
            Self::Api { body, .. } => body["error"].as_str().unwrap_or("internal"),
            Self::Usage(_) => "usage",
            Self::Config(_) => "config",
            Self::Io { .. } => "io",
            Self::Http(_) | Self::Serve(_) => "internal",
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self.code() {
            "usage" => 2,
            "connection_refused" => 3,
            "validation" => 4,
            "stage_gate" => 5,
            "not_found" => 6,
            "unauthorized" => 7,
            "conflict" => 8,
            "unavailable" => 9,
            _ => 1,
        })
    }

    /// The one-line JSON form written to stderr.
    pub fn to_json(&self) -> String {
        let body = match self {
            Self::Api { body, .. } if body.get("error").is_some() => body.clone(),
            Self::Api { status, body } => json!({"error": "internal", "message": format!("HTTP {status}: {body}")}),
            other => json!({"error": other.code(), "message": other.to_string()}),
        };
        body.to_string()
    }
}

pub struct Client {
    http: Http,
    base: String,
    token: Option<String>,
}

impl Client {
    pub fn new(base: &str, token: Option<String>) -> Result<Self, CliError> {
        let http = Http::builder().timeout(None).build()?;
        Ok(Self {
            http,
            base: base.trim_end_matches('/').to_owned(),
            token,
        })
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        let req = self.http.request(method, format!("{}/v1{path}", self.base));
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    fn send(&self, req: RequestBuilder) -> Result<Response, CliError> {
        let resp = req.send().map_err(|e| {
            if e.is_connect() {
                CliError::Connect {
                    url: self.base.clone(),
                    source: e,
                }
            } else {
                CliError::Http(e)
            }
        })?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status().as_u16();
        let text = resp.text().unwrap_or_default();
        let body = serde_json::from_str(&text).unwrap_or(Value::String(text));
        Err(CliError::Api { status, body })
    }

    pub fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> Result<T, CliError> {
        Ok(self.send(self.request(Method::GET, path).query(query))?.json()?)
    }

    /// Raw response body, for exports that stream NDJSON.
    pub fn get_bytes(&self, path: &str, query: &[(&str, String)]) -> Result<Vec<u8>, CliError> {
        Ok(self
            .send(self.request(Method::GET, path).query(query))?
            .bytes()?
            .to_vec())
    }

    pub fn send_json<B: Serialize, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: &B,
    ) -> Result<T, CliError> {
        Ok(self.send(self.request(method, path).json(body))?.json()?)
    }
}
