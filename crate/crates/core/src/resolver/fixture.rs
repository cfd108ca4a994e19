//! Offline fixture database: `CIDR<TAB>name<TAB>parent-or-"-"<TAB>jurisdiction<TAB>threat`.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::net::IpAddr;
use std::path::Path;

use ipnet::IpNet;
use thiserror::Error;

use super::prefix::PrefixTable;
use super::{CompanyTemplate, Jurisdiction, ThreatStatus};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureProblem {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for FixtureProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read fixture file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("fixture rejected: {}", join_problems(.0))]
    Invalid(Vec<FixtureProblem>),
}

fn join_problems(problems: &[FixtureProblem]) -> String {
    problems.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureEntry {
    pub cidr: IpNet,
    pub company: CompanyTemplate,
    pub line: usize,
}

/// A parsed, validated fixture set. Immutable once built.
#[derive(Debug, Clone, Default)]
pub struct FixtureDb {
    entries: Vec<FixtureEntry>,
    table: PrefixTable<usize>,
    catalogue: BTreeMap<String, CompanyTemplate>,
}

impl FixtureDb {
    pub fn parse(text: &str) -> Result<Self, FixtureError> {
        let mut problems = Vec::new();
        let mut entries: Vec<FixtureEntry> = Vec::new();
        let mut table = PrefixTable::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let entry = match parse_line(raw, line) {
                Ok(e) => e,
                Err(message) => {
                    problems.push(FixtureProblem { line, message });
                    continue;
                }
            };
            if let Some(&prior) = table.get(&entry.cidr) {
                let prior: &FixtureEntry = &entries[prior];
                if prior.company != entry.company {
                    problems.push(FixtureProblem {
                        line,
                        message: format!(
                            "{} conflicts with line {} ({:?} vs {:?})",
                            entry.cidr, prior.line, entry.company.name, prior.company.name
                        ),
                    });
                }
                // An exact repeat is harmless; keep the first.
                continue;
            }
            table.insert(entry.cidr, entries.len());
            entries.push(entry);
        }

        let mut catalogue: BTreeMap<String, (CompanyTemplate, usize)> = BTreeMap::new();
        for e in &entries {
            match catalogue.entry(e.company.name.clone()) {
                Entry::Vacant(v) => {
                    v.insert((e.company.clone(), e.line));
                }
                Entry::Occupied(o) => {
                    let (known, first_line) = o.get();
                    if known != &e.company {
                        problems.push(FixtureProblem {
                            line: e.line,
                            message: format!(
                                "company {:?} described differently on line {}",
                                e.company.name, first_line
                            ),
                        });
                    }
                }
            }
        }
        if !problems.is_empty() {
            problems.sort_by_key(|p| p.line);
            return Err(FixtureError::Invalid(problems));
        }

        let mut catalogue: BTreeMap<String, CompanyTemplate> =
            catalogue.into_iter().map(|(k, (v, _))| (k, v)).collect();
        // Parents named only as parents still belong to the catalogue.
        let parents: Vec<String> = catalogue.values().filter_map(|c| c.parent.clone()).collect();
        for p in parents {
            catalogue.entry(p.clone()).or_insert_with(|| CompanyTemplate {
                name: p,
                parent: None,
                jurisdiction: Jurisdiction::unknown(),
                threat: ThreatStatus::Unknown,
            });
        }

        Ok(Self {
            entries,
            table,
            catalogue,
        })
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FixtureEntry] {
        &self.entries
    }

    pub fn lookup(&self, ip: IpAddr) -> Option<&FixtureEntry> {
        self.table.longest_match(ip).map(|(_, &i)| &self.entries[i])
    }

    pub fn catalogue(&self) -> &BTreeMap<String, CompanyTemplate> {
        &self.catalogue
    }
}

fn parse_line(raw: &str, line: usize) -> Result<FixtureEntry, String> {
    let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 tab-separated fields, found {}", fields.len()));
    }
    let cidr = parse_cidr(fields[0])?;
    let name = fields[1];
    if name.is_empty() {
        return Err("empty company name".into());
    }
    let parent = match fields[2] {
        "-" | "" => None,
        p if p == name => return Err(format!("{name:?} lists itself as parent")),
        p => Some(p.to_owned()),
    };
    let jurisdiction: Jurisdiction = fields[3].parse().map_err(|e| format!("{e}"))?;
    let threat: ThreatStatus = fields[4].parse()?;
    Ok(FixtureEntry {
        cidr,
        company: CompanyTemplate {
            name: name.to_owned(),
            parent,
            jurisdiction,
            threat,
        },
        line,
    })
}

/// Accepts `a.b.c.d/len`, IPv6 equivalents, or a bare address (host route).
/// Host bits are cleared.
pub fn parse_cidr(s: &str) -> Result<IpNet, String> {
    if let Ok(net) = s.parse::<IpNet>() {
        return Ok(net.trunc());
    }
    s.parse::<IpAddr>()
        .map(IpNet::from)
        .map_err(|_| format!("invalid prefix {s:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_comments() {
        assert_eq!(FixtureDb::parse("").unwrap().len(), 0);
        assert_eq!(FixtureDb::parse("# nothing\n\n").unwrap().len(), 0);
    }

    #[test]
    fn three_valid_lines() {
        let text = "93.184.216.0/24\tEdgecast (US)\t-\tUS\tNONE\n\
                    157.240.0.0/16\tFacebook\t-\tUS\tNONE\n\
                    2a03:2880::/32\tFacebook\t-\tUS\tNONE\n";
        let db = FixtureDb::parse(text).unwrap();
        assert_eq!(db.len(), 3);
        let hit = db.lookup("93.184.216.34".parse().unwrap()).unwrap();
        assert_eq!(hit.company.name, "Edgecast (US)");
        assert!(db.lookup("2a03:2880::1".parse().unwrap()).is_some());
    }

    #[test]
    fn conflicting_duplicate_names_both_lines() {
        let text = "# header\n10.0.0.0/24\tA\t-\tUS\tNONE\n10.0.0.0/24\tB\t-\tUS\tNONE\n";
        let err = FixtureDb::parse(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn bad_lines_are_all_reported() {
        let text = "bogus\tA\t-\tUS\tNONE\n1.0.0.0/8\t\t-\tUS\tNONE\n1.0.0.0/8\tA\tA\tUS\tNONE\n2.0.0.0/8\tB\t-\tXX\tNONE\n3.0.0.0/8\tC\t-\tUS\tMEH\n";
        match FixtureDb::parse(text).unwrap_err() {
            FixtureError::Invalid(p) => {
                assert_eq!(p.iter().map(|p| p.line).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5])
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn implicit_parents_join_catalogue() {
        let db = FixtureDb::parse("10.0.0.0/8\tInstagram\tFacebook\tUS\tNONE\n").unwrap();
        let fb = &db.catalogue()["Facebook"];
        assert!(fb.parent.is_none());
        assert!(fb.jurisdiction.is_unknown());
    }

    #[test]
    fn inconsistent_company_rejected() {
        let text = "10.0.0.0/8\tA\t-\tUS\tNONE\n11.0.0.0/8\tA\t-\tDE\tNONE\n";
        assert!(FixtureDb::parse(text).is_err());
    }

    #[test]
    fn host_bits_and_bare_addresses() {
        assert_eq!(parse_cidr("10.1.2.3/8").unwrap().to_string(), "10.0.0.0/8");
        assert_eq!(parse_cidr("10.1.2.3").unwrap().to_string(), "10.1.2.3/32");
    }
}
