//! Destination enrichment: IP address → operating company, corporate parent,
//! jurisdiction and threat status.
//!
//! Lookup order is cache (within TTL), fixture longest-prefix match, provider,
//! then the Unknown record. Fixture data is offline and deterministic; the
//! provider is optional.

mod fixture;
mod jurisdiction;
mod prefix;
mod provider;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::net::IpAddr;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ipnet::IpNet;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowcap::is_local;
use crate::time::{DAY_MS, HOUR_MS};

pub use fixture::{parse_cidr, FixtureDb, FixtureEntry, FixtureError, FixtureProblem};
pub use jurisdiction::{HomeRegion, Jurisdiction, JurisdictionError, EU_MEMBERS};
pub use prefix::{covers, subtract, PrefixTable};
pub use provider::{Provider, ProviderError, RecordedProvider, RecordingError};

pub const UNKNOWN_COMPANY: &str = "Unknown";
pub const LOCAL_COMPANY: &str = "Local network";
pub const DEFAULT_TTL_MS: i64 = 7 * DAY_MS;
pub const FAILURE_TTL_MS: i64 = HOUR_MS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ThreatStatus {
    None,
    Suspicious,
    Malicious,
    Unknown,
}

impl FromStr for ThreatStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NONE" => Ok(Self::None),
            "SUSPICIOUS" => Ok(Self::Suspicious),
            "MALICIOUS" => Ok(Self::Malicious),
            "UNKNOWN" => Ok(Self::Unknown),
            _ => Err(format!("invalid threat status {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecordSource {
    Fixture,
    Provider,
    Manual,
}

/// Company attributes without resolution metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompanyTemplate {
    pub name: String,
    pub parent: Option<String>,
    pub jurisdiction: Jurisdiction,
    pub threat: ThreatStatus,
}

impl CompanyTemplate {
    pub fn unknown() -> Self {
        Self {
            name: UNKNOWN_COMPANY.to_owned(),
            parent: None,
            jurisdiction: Jurisdiction::unknown(),
            threat: ThreatStatus::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompanyRecord {
    pub name: String,
    /// Immediate owner, if any. Use [`Resolver::corporate_group`] for the root.
    pub parent: Option<String>,
    pub jurisdiction: Jurisdiction,
    pub threat: ThreatStatus,
    pub source: RecordSource,
    pub resolved_at_ms: i64,
    pub ttl_ms: i64,
}

impl CompanyRecord {
    fn from_template(t: CompanyTemplate, source: RecordSource, now_ms: i64, ttl_ms: i64) -> Self {
        Self {
            name: t.name,
            parent: t.parent,
            jurisdiction: t.jurisdiction,
            threat: t.threat,
            source,
            resolved_at_ms: now_ms,
            ttl_ms,
        }
    }

    pub fn template(&self) -> CompanyTemplate {
        CompanyTemplate {
            name: self.name.clone(),
            parent: self.parent.clone(),
            jurisdiction: self.jurisdiction.clone(),
            threat: self.threat,
        }
    }

    pub fn is_unknown(&self) -> bool {
        self.name == UNKNOWN_COMPANY
    }

    pub fn fresh_at(&self, now_ms: i64) -> bool {
        now_ms < self.resolved_at_ms.saturating_add(self.ttl_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupError {
    #[error("ownership cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
}

/// Result of walking parent links.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupRoot {
    pub root: String,
    /// False when the starting company is absent from all known data; the
    /// root is then the name itself.
    pub known: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolverConfig {
    pub ttl_ms: i64,
    pub failure_ttl_ms: i64,
}

impl Default for ResolverConfig {
    fn default() -> Self {
        Self {
            ttl_ms: DEFAULT_TTL_MS,
            failure_ttl_ms: FAILURE_TTL_MS,
        }
    }
}

fn walk_to_root(catalogue: &dyn Fn(&str) -> Option<Option<String>>, name: &str) -> Result<GroupRoot, GroupError> {
    let Some(mut parent) = catalogue(name) else {
        return Ok(GroupRoot {
            root: name.to_owned(),
            known: false,
        });
    };
    let mut path = vec![name.to_owned()];
    let mut current = name.to_owned();
    while let Some(p) = parent {
        if let Some(pos) = path.iter().position(|seen| *seen == p) {
            let mut cycle = path[pos..].to_vec();
            cycle.push(p);
            return Err(GroupError::Cycle(cycle));
        }
        path.push(p.clone());
        current = p;
        // A parent missing from the catalogue is treated as a root.
        parent = catalogue(&current).flatten();
    }
    Ok(GroupRoot {
        root: current,
        known: true,
    })
}

/// Consistent view of everything that attributes addresses to companies,
/// used for firewall compilation and for evaluating directives directly.
#[derive(Debug, Clone)]
pub struct OwnershipSnapshot {
    generation: u64,
    fixtures: Arc<FixtureDb>,
    /// Provider-resolved addresses outside every fixture prefix.
    hosts: BTreeMap<IpAddr, String>,
    catalogue: BTreeMap<String, CompanyTemplate>,
}

impl OwnershipSnapshot {
    pub fn from_fixtures(fixtures: FixtureDb) -> Self {
        let catalogue = fixtures.catalogue().clone();
        Self {
            generation: 0,
            fixtures: Arc::new(fixtures),
            hosts: BTreeMap::new(),
            catalogue,
        }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// The company an address is attributed to, by the same rules as resolve
    /// (minus the cache, which never disagrees with these sources).
    pub fn owner_of(&self, ip: IpAddr) -> Option<&str> {
        if let Some(e) = self.fixtures.lookup(ip) {
            return Some(&e.company.name);
        }
        self.hosts.get(&ip).map(String::as_str)
    }

    pub fn knows_company(&self, name: &str) -> bool {
        self.catalogue.contains_key(name)
    }

    pub fn company(&self, name: &str) -> Option<&CompanyTemplate> {
        self.catalogue.get(name)
    }

    pub fn companies(&self) -> impl Iterator<Item = &CompanyTemplate> {
        self.catalogue.values()
    }

    pub fn corporate_group(&self, name: &str) -> Result<GroupRoot, GroupError> {
        walk_to_root(&|n| self.catalogue.get(n).map(|c| c.parent.clone()), name)
    }

    /// Every known company whose group root is `root` (including the root).
    pub fn group_members(&self, root: &str) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self
            .catalogue
            .keys()
            .filter(|n| matches!(self.corporate_group(n), Ok(g) if g.root == root))
            .cloned()
            .collect();
        if out.is_empty() {
            out.insert(root.to_owned());
        }
        out
    }

    /// Disjoint prefixes covering exactly the addresses whose owner is in
    /// `companies`. Nested prefixes belonging to other companies are carved
    /// out, so the result agrees with longest-prefix attribution.
    pub fn prefixes_for(&self, companies: &BTreeSet<String>) -> Vec<IpNet> {
        let entries = self.fixtures.entries();
        let mut out = Vec::new();
        for e in entries.iter().filter(|e| companies.contains(&e.company.name)) {
            let holes: Vec<IpNet> = entries
                .iter()
                .filter(|f| {
                    !companies.contains(&f.company.name)
                        && f.cidr.prefix_len() > e.cidr.prefix_len()
                        && covers(&e.cidr, &f.cidr)
                })
                .map(|f| f.cidr)
                .collect();
            out.extend(subtract(e.cidr, &holes));
        }
        out.extend(
            self.hosts
                .iter()
                .filter(|(_, c)| companies.contains(*c))
                .map(|(ip, _)| IpNet::from(*ip)),
        );
        out.sort();
        out.dedup();
        out
    }
}

/// Thread-safe resolver with a per-address cache.
pub struct Resolver {
    config: ResolverConfig,
    fixtures: RwLock<Arc<FixtureDb>>,
    provider: Option<Arc<dyn Provider>>,
    provider_lock: Mutex<()>,
    cache: RwLock<HashMap<IpAddr, CompanyRecord>>,
    learned: RwLock<BTreeMap<String, CompanyTemplate>>,
    hosts: RwLock<BTreeMap<IpAddr, String>>,
    generation: AtomicU64,
}

impl fmt::Debug for Resolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Resolver")
            .field("config", &self.config)
            .field("fixtures", &self.fixtures.read().len())
            .field("provider", &self.provider.is_some())
            .field("cached", &self.cache.read().len())
            .finish()
    }
}

impl Default for Resolver {
    fn default() -> Self {
        Self::new(ResolverConfig::default(), None)
    }
}

impl Resolver {
    pub fn new(config: ResolverConfig, provider: Option<Arc<dyn Provider>>) -> Self {
        Self {
            config,
            fixtures: RwLock::new(Arc::new(FixtureDb::default())),
            provider,
            provider_lock: Mutex::new(()),
            cache: RwLock::new(HashMap::new()),
            learned: RwLock::new(BTreeMap::new()),
            hosts: RwLock::new(BTreeMap::new()),
            generation: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> ResolverConfig {
        self.config
    }

    /// Bumped whenever attribution data changes (fixture load, a new provider
    /// answer, a purge). Rule sets compiled at an older generation are stale.
    pub fn generation(&self) -> u64 {
        self.generation.load(Ordering::SeqCst)
    }

    fn bump(&self) {
        self.generation.fetch_add(1, Ordering::SeqCst);
    }

    /// Replaces the fixture set atomically and drops the cache.
    pub fn set_fixtures(&self, db: FixtureDb) -> usize {
        let n = db.len();
        let mut fixtures = self.fixtures.write();
        let mut cache = self.cache.write();
        *fixtures = Arc::new(db);
        cache.clear();
        self.bump();
        n
    }

    pub fn load_fixtures(&self, path: &Path) -> Result<usize, FixtureError> {
        let db = FixtureDb::load(path)?;
        Ok(self.set_fixtures(db))
    }

    pub fn fixtures(&self) -> Arc<FixtureDb> {
        self.fixtures.read().clone()
    }

    pub fn resolve(&self, ip: IpAddr, now_ms: i64) -> CompanyRecord {
        if is_local(ip) {
            return CompanyRecord {
                name: LOCAL_COMPANY.to_owned(),
                parent: None,
                jurisdiction: Jurisdiction::unknown(),
                threat: ThreatStatus::None,
                source: RecordSource::Manual,
                resolved_at_ms: now_ms,
                ttl_ms: self.config.ttl_ms,
            };
        }
        if let Some(hit) = self.cached(ip, now_ms) {
            return hit;
        }
        let fixtures = self.fixtures();
        if let Some(entry) = fixtures.lookup(ip) {
            let rec =
                CompanyRecord::from_template(entry.company.clone(), RecordSource::Fixture, now_ms, self.config.ttl_ms);
            self.cache.write().insert(ip, rec.clone());
            return rec;
        }
        let Some(provider) = &self.provider else {
            let rec = CompanyRecord::from_template(
                CompanyTemplate::unknown(),
                RecordSource::Fixture,
                now_ms,
                self.config.ttl_ms,
            );
            self.cache.write().insert(ip, rec.clone());
            return rec;
        };

        // Serialise provider traffic so concurrent misses on one address
        // produce a single call.
        let _guard = self.provider_lock.lock();
        if let Some(hit) = self.cached(ip, now_ms) {
            return hit;
        }
        let rec = match provider.lookup(ip) {
            Ok(Some(template)) => {
                self.learn(ip, &template);
                CompanyRecord::from_template(template, RecordSource::Provider, now_ms, self.config.ttl_ms)
            }
            Ok(None) => {
                self.forget_host(ip);
                CompanyRecord::from_template(
                    CompanyTemplate::unknown(),
                    RecordSource::Provider,
                    now_ms,
                    self.config.ttl_ms,
                )
            }
            Err(e) => {
                tracing::debug!(%ip, error = %e, "provider lookup failed");
                CompanyRecord::from_template(
                    CompanyTemplate::unknown(),
                    RecordSource::Provider,
                    now_ms,
                    self.config.failure_ttl_ms,
                )
            }
        };
        self.cache.write().insert(ip, rec.clone());
        rec
    }

    fn cached(&self, ip: IpAddr, now_ms: i64) -> Option<CompanyRecord> {
        self.cache.read().get(&ip).filter(|r| r.fresh_at(now_ms)).cloned()
    }

    fn learn(&self, ip: IpAddr, template: &CompanyTemplate) {
        let mut changed = false;
        {
            let mut learned = self.learned.write();
            if learned.get(&template.name) != Some(template) {
                learned.insert(template.name.clone(), template.clone());
                changed = true;
            }
        }
        {
            let mut hosts = self.hosts.write();
            if hosts.get(&ip) != Some(&template.name) {
                hosts.insert(ip, template.name.clone());
                changed = true;
            }
        }
        if changed {
            self.bump();
        }
    }

    fn forget_host(&self, ip: IpAddr) {
        if self.hosts.write().remove(&ip).is_some() {
            self.bump();
        }
    }

    /// Drops cached and learned attributions for the given addresses.
    pub fn purge_addresses(&self, ips: &[IpAddr]) {
        if ips.is_empty() {
            return;
        }
        let mut cache = self.cache.write();
        let mut hosts = self.hosts.write();
        for ip in ips {
            cache.remove(ip);
            hosts.remove(ip);
        }
        self.bump();
    }

    pub fn cached_len(&self) -> usize {
        self.cache.read().len()
    }

    pub fn snapshot(&self) -> OwnershipSnapshot {
        // Read generation first: a concurrent change makes the snapshot look
        // stale rather than fresh.
        let generation = self.generation();
        let fixtures = self.fixtures();
        let mut catalogue = fixtures.catalogue().clone();
        for (name, t) in self.learned.read().iter() {
            catalogue.entry(name.clone()).or_insert_with(|| t.clone());
        }
        let hosts = self
            .hosts
            .read()
            .iter()
            .filter(|(ip, _)| fixtures.lookup(**ip).is_none())
            .map(|(ip, c)| (*ip, c.clone()))
            .collect();
        OwnershipSnapshot {
            generation,
            fixtures,
            hosts,
            catalogue,
        }
    }

    pub fn corporate_group(&self, name: &str) -> Result<GroupRoot, GroupError> {
        self.snapshot().corporate_group(name)
    }

    pub fn company(&self, name: &str) -> Option<CompanyTemplate> {
        if let Some(c) = self.fixtures().catalogue().get(name) {
            return Some(c.clone());
        }
        self.learned.read().get(name).cloned()
    }
}
