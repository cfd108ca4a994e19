//! Context slots: template placeholders filled from the household's own data.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::exposure::{ExposureModel, SeriesFilter};
use crate::flowcap::{DeviceId, Direction, Encryption, FlowRecord, Locality};
use crate::resolver::Jurisdiction;
use crate::time::TimeWindow;

pub const ENCRYPTED_VS_PLAINTEXT: &str = "encrypted_vs_plaintext_devices";
pub const TOP_COMPANIES: &str = "top_companies";
pub const JURISDICTION_COUNT: &str = "jurisdiction_count";
pub const SLOTS: [&str; 3] = [ENCRYPTED_VS_PLAINTEXT, TOP_COMPANIES, JURISDICTION_COUNT];
pub const TOP_COMPANIES_N: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextExample {
    pub slot: String,
    pub text: String,
    pub window: TimeWindow,
    pub source_query: String,
}

/// Devices split by whether they sent any plaintext traffic.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncryptionPartition {
    pub encrypted_only: Vec<String>,
    pub sent_plaintext: Vec<String>,
}

/// Everything the built-in slots read, gathered once per render.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextData {
    pub window: TimeWindow,
    pub encryption: EncryptionPartition,
    /// Companies by bytes descending, ties alphabetical.
    pub companies: Vec<String>,
    /// Known jurisdictions receiving traffic.
    pub jurisdictions: BTreeSet<Jurisdiction>,
}

impl ContextData {
    /// Builds slot inputs from stored flows and the exposure model. Only
    /// external, outbound flows count, the same traffic exposure buckets
    /// cover by default. Devices are listed by friendly name when known.
    pub fn gather<'a>(
        window: TimeWindow,
        flows: impl IntoIterator<Item = &'a FlowRecord>,
        device_names: &BTreeMap<DeviceId, String>,
        exposure: &ExposureModel,
    ) -> Self {
        let mut plaintext: BTreeMap<String, bool> = BTreeMap::new();
        for f in flows {
            if !window.contains(f.window_start_ms)
                || f.locality != Locality::External
                || f.direction != Direction::Outbound
            {
                continue;
            }
            let name = device_names
                .get(&f.device_id)
                .cloned()
                .unwrap_or_else(|| f.device_id.to_string());
            *plaintext.entry(name).or_default() |= f.encryption == Encryption::Plaintext;
        }
        let mut encryption = EncryptionPartition::default();
        for (name, any_plain) in plaintext {
            if any_plain {
                encryption.sent_plaintext.push(name);
            } else {
                encryption.encrypted_only.push(name);
            }
        }
        let totals = exposure.company_totals(&SeriesFilter::default(), &window);
        Self {
            window,
            encryption,
            companies: totals.iter().map(|t| t.0.clone()).collect(),
            jurisdictions: totals
                .iter()
                .filter(|t| !t.1.is_unknown())
                .map(|t| t.1.clone())
                .collect(),
        }
    }

    pub fn fill(&self, slot: &str) -> Option<ContextExample> {
        let (text, source_query) = match slot {
            ENCRYPTED_VS_PLAINTEXT => (
                self.encryption_text(),
                "external outbound flows in window, devices partitioned by any PLAINTEXT flow",
            ),
            TOP_COMPANIES => (
                if self.companies.is_empty() {
                    "no companies yet, as nothing has been recorded in this period".to_owned()
                } else {
                    self.companies
                        .iter()
                        .take(TOP_COMPANIES_N)
                        .cloned()
                        .collect::<Vec<_>>()
                        .join(", ")
                },
                "exposure company totals in window, top 3 by bytes",
            ),
            JURISDICTION_COUNT => (
                match self.jurisdictions.len() {
                    0 => "no known jurisdictions yet, as nothing has been recorded in this period".to_owned(),
                    n => {
                        let codes: Vec<&str> = self.jurisdictions.iter().map(Jurisdiction::as_str).collect();
                        let noun = if n == 1 { "jurisdiction" } else { "jurisdictions" };
                        format!("{n} {noun} ({})", codes.join(", "))
                    }
                },
                "exposure company totals in window, distinct known jurisdictions",
            ),
            _ => return None,
        };
        Some(ContextExample {
            slot: slot.to_owned(),
            text,
            window: self.window,
            source_query: source_query.to_owned(),
        })
    }

    fn encryption_text(&self) -> String {
        let p = &self.encryption;
        if p.encrypted_only.is_empty() && p.sent_plaintext.is_empty() {
            return "No device traffic has been recorded in this period yet.".to_owned();
        }
        let list = |v: &[String]| {
            if v.is_empty() {
                "none".to_owned()
            } else {
                v.join(", ")
            }
        };
        format!(
            "Devices that only sent encrypted data: {}. Devices that sent unencrypted data: {}.",
            list(&p.encrypted_only),
            list(&p.sent_plaintext)
        )
    }
}

/// Slot names referenced by a template, in order of first appearance.
pub fn slot_names(template: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        let Some(close) = after.find("}}") else { break };
        let name = after[..close].trim().to_owned();
        if !out.contains(&name) {
            out.push(name);
        }
        rest = &after[close + 2..];
    }
    out
}

/// Replaces each `{{slot}}` using `fill`; the first unfillable slot is
/// returned as the error.
pub fn substitute(template: &str, mut fill: impl FnMut(&str) -> Option<String>) -> Result<String, String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        let Some(close) = after.find("}}") else { break };
        out.push_str(&rest[..open]);
        let name = after[..close].trim();
        out.push_str(&fill(name).ok_or_else(|| name.to_owned())?);
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}
