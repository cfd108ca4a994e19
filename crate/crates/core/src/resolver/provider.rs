//! Pluggable enrichment providers.
//!
//! A provider answers one question: who operates this address? The contract:
//!
//! * `lookup(ip)` is called at most once per address per cache lifetime, with
//!   the resolver's provider lock held, so implementations may be blocking.
//! * `Ok(Some(template))` is an authoritative answer; it is cached for the
//!   normal TTL and the address joins the company's prefix set (as a host
//!   route) for firewall compilation.
//! * `Ok(None)` means the provider knows nothing; the address resolves to the
//!   Unknown record for the normal TTL.
//! * `Err(_)` is a transient failure (timeout, rate limit, network); the
//!   address resolves to Unknown with the short failure TTL so it is retried.
//!
//! Providers must never be consulted for local addresses; the resolver
//! filters those out before calling.

use std::collections::HashMap;
use std::net::IpAddr;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use serde::Deserialize;
use thiserror::Error;

use super::{CompanyTemplate, Jurisdiction, ThreatStatus};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider unavailable: {0}")]
    Unavailable(String),
}

pub trait Provider: Send + Sync {
    fn lookup(&self, ip: IpAddr) -> Result<Option<CompanyTemplate>, ProviderError>;
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordedLine {
    ip: IpAddr,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    parent: Option<String>,
    #[serde(default)]
    jurisdiction: Option<Jurisdiction>,
    #[serde(default)]
    threat: Option<ThreatStatus>,
    #[serde(default)]
    error: Option<String>,
}

#[derive(Debug, Clone)]
enum Recorded {
    Answer(CompanyTemplate),
    Failure(String),
}

#[derive(Debug, Error)]
pub enum RecordingError {
    #[error("cannot read recording {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("recording line {line}: {message}")]
    Line { line: usize, message: String },
}

/// Replays canned responses and counts calls. Addresses absent from the
/// recording answer `Ok(None)`.
///
/// Recording format: JSON lines, one per address, either
/// `{"ip": "...", "name": "...", "parent": null, "jurisdiction": "US", "threat": "NONE"}`
/// or `{"ip": "...", "error": "timeout"}`.
#[derive(Debug, Default)]
pub struct RecordedProvider {
    answers: HashMap<IpAddr, Recorded>,
    calls: AtomicUsize,
    failing: AtomicBool,
}

impl RecordedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_answer(mut self, ip: IpAddr, company: CompanyTemplate) -> Self {
        self.answers.insert(ip, Recorded::Answer(company));
        self
    }

    pub fn with_failure(mut self, ip: IpAddr, reason: &str) -> Self {
        self.answers.insert(ip, Recorded::Failure(reason.to_owned()));
        self
    }

    pub fn parse(text: &str) -> Result<Self, RecordingError> {
        let mut out = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let rec: RecordedLine = serde_json::from_str(raw).map_err(|e| RecordingError::Line {
                line,
                message: e.to_string(),
            })?;
            let entry = match (rec.error, rec.name) {
                (Some(reason), None) => Recorded::Failure(reason),
                (None, Some(name)) if !name.is_empty() => Recorded::Answer(CompanyTemplate {
                    name,
                    parent: rec.parent,
                    jurisdiction: rec.jurisdiction.unwrap_or_else(Jurisdiction::unknown),
                    threat: rec.threat.unwrap_or(ThreatStatus::Unknown),
                }),
                _ => {
                    return Err(RecordingError::Line {
                        line,
                        message: "need exactly one of a nonempty \"name\" or \"error\"".into(),
                    })
                }
            };
            out.answers.insert(rec.ip, entry);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, RecordingError> {
        let text = std::fs::read_to_string(path).map_err(|source| RecordingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// While set, every lookup fails with a timeout.
    pub fn set_failing(&self, failing: bool) {
        self.failing.store(failing, Ordering::SeqCst);
    }
}

impl Provider for RecordedProvider {
    fn lookup(&self, ip: IpAddr) -> Result<Option<CompanyTemplate>, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.failing.load(Ordering::SeqCst) {
            return Err(ProviderError::Timeout);
        }
        match self.answers.get(&ip) {
            Some(Recorded::Answer(c)) => Ok(Some(c.clone())),
            Some(Recorded::Failure(reason)) if reason == "timeout" => Err(ProviderError::Timeout),
            Some(Recorded::Failure(reason)) => Err(ProviderError::Unavailable(reason.clone())),
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recording_round_trip() {
        let p = RecordedProvider::parse(
            r#"{"ip":"203.0.113.7","name":"Acme","parent":null,"jurisdiction":"DE","threat":"NONE"}
{"ip":"203.0.113.8","error":"timeout"}
"#,
        )
        .unwrap();
        let hit = p.lookup("203.0.113.7".parse().unwrap()).unwrap().unwrap();
        assert_eq!(hit.name, "Acme");
        assert_eq!(p.lookup("203.0.113.8".parse().unwrap()), Err(ProviderError::Timeout));
        assert_eq!(p.lookup("203.0.113.9".parse().unwrap()), Ok(None));
        assert_eq!(p.calls(), 3);
        p.set_failing(true);
        assert!(p.lookup("203.0.113.7".parse().unwrap()).is_err());
    }

    #[test]
    fn malformed_recording_names_line() {
        let err = RecordedProvider::parse("\n{\"ip\":\"1.2.3.4\"}\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
