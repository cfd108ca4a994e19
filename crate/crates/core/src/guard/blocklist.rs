use std::collections::BTreeSet;

use ipnet::IpNet;
use serde::{Deserialize, Serialize};

use super::GuardError;
use crate::resolver::parse_cidr;

pub const ADS_BASIC_ID: &str = "ads-basic";
const ADS_BASIC: &str = include_str!("../../assets/blocklists/ads-basic.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BlocklistSource {
    Curated,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blocklist {
    pub id: String,
    pub name: String,
    pub companies: BTreeSet<String>,
    pub prefixes: BTreeSet<IpNet>,
    pub source: BlocklistSource,
    pub enabled: bool,
}

impl Blocklist {
    /// Parses the list format: one company name or CIDR prefix per line,
    /// `#` starts a comment line. Lines that parse as an address or prefix
    /// are prefixes; everything else names a company.
    pub fn parse(id: &str, name: &str, source: BlocklistSource, text: &str) -> Result<Self, GuardError> {
        let id = id.trim();
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(GuardError::Validation {
                field: "id",
                message: format!("blocklist id {id:?} must be nonempty and use [A-Za-z0-9_-]"),
            });
        }
        let mut companies = BTreeSet::new();
        let mut prefixes = BTreeSet::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match parse_cidr(line) {
                Ok(net) => {
                    prefixes.insert(net);
                }
                Err(_) => {
                    companies.insert(line.to_owned());
                }
            }
        }
        let list = Self {
            id: id.to_owned(),
            name: name.to_owned(),
            companies,
            prefixes,
            source,
            enabled: true,
        };
        list.check()?;
        Ok(list)
    }

    /// Enabled lists must name at least one company or prefix.
    pub fn check(&self) -> Result<(), GuardError> {
        if self.enabled && self.is_empty() {
            return Err(GuardError::EmptyBlocklist(self.id.clone()));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.companies.is_empty() && self.prefixes.is_empty()
    }

    /// The curated sample list shipped with the gateway.
    pub fn ads_basic() -> Self {
        Self::parse(
            ADS_BASIC_ID,
            "Basic ad and tracker blocking",
            BlocklistSource::Curated,
            ADS_BASIC,
        )
        .expect("bundled list is valid")
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# {}\n", self.name);
        for c in &self.companies {
            out.push_str(c);
            out.push('\n');
        }
        for p in &self.prefixes {
            out.push_str(&p.to_string());
            out.push('\n');
        }
        out
    }
}
