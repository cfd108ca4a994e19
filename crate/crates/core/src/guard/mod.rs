//! Human-level firewall directives.
//!
//! A directive reads "block all traffic between <device> and <company>". It
//! is created disabled, previewed against stored history, then armed. Enabled
//! directives compile to a versioned rule set of (device match, prefix set)
//! entries; [`decide`] is the enforcement predicate and enforcement adapters
//! install the rule set on a real or simulated data path.

mod blocklist;
mod compile;
mod enforce;
mod suggest;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowcap::DeviceId;
use crate::resolver::OwnershipSnapshot;
use crate::stage::{Feature, StageConfig, StageGateError};

pub use blocklist::{Blocklist, BlocklistSource, ADS_BASIC_ID};
pub use compile::{
    compile, decide, preview_impact, scope_companies, BlockImpactPreview, CompiledRuleSet, DeviceImpact, DeviceMatch,
    InertDirective, RuleEntry, Verdict,
};
pub use enforce::{AdapterError, EnforcementAdapter, Enforcer, NftScriptAdapter, SimulatedAdapter};
pub use suggest::{suggest_similar, Suggestion, SuggestionReason, SUGGEST_LOOKBACK_MS};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DirectiveId(pub String);

impl fmt::Display for DirectiveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DirectiveId {
    fn from(value: &str) -> Self {
        DirectiveId(value.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeviceScope {
    All,
    Device { device_id: DeviceId },
}

impl DeviceScope {
    pub fn matches(&self, device: &DeviceId) -> bool {
        match self {
            DeviceScope::All => true,
            DeviceScope::Device { device_id } => device_id == device,
        }
    }

    /// True when every device this scope covers is also covered by `other`.
    pub fn within(&self, other: &DeviceScope) -> bool {
        match other {
            DeviceScope::All => true,
            DeviceScope::Device { .. } => self == other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompanyScope {
    Company {
        name: String,
    },
    /// Every company whose ownership chain ends at `root`.
    Group {
        root: String,
    },
    Blocklist {
        id: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DirectiveState {
    Enabled,
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirewallDirective {
    pub id: DirectiveId,
    pub device_scope: DeviceScope,
    pub company_scope: CompanyScope,
    pub state: DirectiveState,
    pub created_at_ms: i64,
    pub label: String,
}

impl FirewallDirective {
    pub fn is_enabled(&self) -> bool {
        self.state == DirectiveState::Enabled
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GuardError {
    #[error(transparent)]
    StageGate(#[from] StageGateError),
    #[error("invalid {field}: {message}")]
    Validation { field: &'static str, message: String },
    #[error("no directive {0}")]
    UnknownDirective(DirectiveId),
    #[error("no blocklist {0:?}")]
    UnknownBlocklist(String),
    #[error("blocklist {0:?} is enabled but lists nothing")]
    EmptyBlocklist(String),
    #[error("{0}")]
    Conflict(String),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

/// What directive validation needs to know about the household.
pub struct ScopeContext<'a> {
    /// Device id → friendly name.
    pub devices: &'a BTreeMap<DeviceId, String>,
    pub snapshot: &'a OwnershipSnapshot,
    /// Companies seen in stored traffic, whether or not resolver data still
    /// describes them.
    pub observed_companies: &'a BTreeSet<String>,
}

impl ScopeContext<'_> {
    fn company_known(&self, name: &str) -> bool {
        self.snapshot.knows_company(name) || self.observed_companies.contains(name)
    }
}

/// Stable export format for directives and user blocklists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectiveExport {
    pub schema: String,
    pub version: u32,
    pub directives: Vec<FirewallDirective>,
    pub blocklists: Vec<Blocklist>,
}

pub const DIRECTIVE_SCHEMA: &str = "hearth-directives";
pub const DIRECTIVE_SCHEMA_VERSION: u32 = 1;

/// Directive and blocklist registry plus the rule-set version counter.
#[derive(Debug, Clone)]
pub struct Guard {
    directives: BTreeMap<DirectiveId, FirewallDirective>,
    blocklists: BTreeMap<String, Blocklist>,
    next_id: u64,
    last_version: u64,
}

impl Default for Guard {
    fn default() -> Self {
        Self::new()
    }
}

impl Guard {
    /// An empty registry holding the bundled curated blocklist.
    pub fn new() -> Self {
        let mut blocklists = BTreeMap::new();
        let ads = Blocklist::ads_basic();
        blocklists.insert(ads.id.clone(), ads);
        Self {
            directives: BTreeMap::new(),
            blocklists,
            next_id: 1,
            last_version: 0,
        }
    }

    /// Rebuilds state from persisted parts.
    pub fn restore(
        &mut self,
        directives: impl IntoIterator<Item = FirewallDirective>,
        blocklists: impl IntoIterator<Item = Blocklist>,
        last_version: u64,
    ) {
        for d in directives {
            if let Some(n) = d.id.0.strip_prefix("dir-").and_then(|n| n.parse::<u64>().ok()) {
                self.next_id = self.next_id.max(n + 1);
            }
            self.directives.insert(d.id.clone(), d);
        }
        for b in blocklists {
            self.blocklists.insert(b.id.clone(), b);
        }
        self.last_version = self.last_version.max(last_version);
    }

    pub fn directives(&self) -> impl Iterator<Item = &FirewallDirective> {
        self.directives.values()
    }

    pub fn directive(&self, id: &DirectiveId) -> Result<&FirewallDirective, GuardError> {
        self.directives
            .get(id)
            .ok_or_else(|| GuardError::UnknownDirective(id.clone()))
    }

    pub fn blocklists(&self) -> &BTreeMap<String, Blocklist> {
        &self.blocklists
    }

    pub fn last_version(&self) -> u64 {
        self.last_version
    }

    /// Renders `block all traffic between <device> and <company>`.
    pub fn label(&self, device: &DeviceScope, company: &CompanyScope, devices: &BTreeMap<DeviceId, String>) -> String {
        let device = match device {
            DeviceScope::All => "all devices".to_owned(),
            DeviceScope::Device { device_id } => {
                devices.get(device_id).cloned().unwrap_or_else(|| device_id.to_string())
            }
        };
        let company = match company {
            CompanyScope::Company { name } => name.clone(),
            CompanyScope::Group { root } => format!("{root} and its subsidiaries"),
            CompanyScope::Blocklist { id } => self
                .blocklists
                .get(id)
                .map(|b| format!("{} ({id})", b.name))
                .unwrap_or_else(|| id.clone()),
        };
        format!("block all traffic between <{device}> and <{company}>")
    }

    fn validate(&self, device: &DeviceScope, company: &CompanyScope, ctx: &ScopeContext<'_>) -> Result<(), GuardError> {
        if let DeviceScope::Device { device_id } = device {
            if !ctx.devices.contains_key(device_id) {
                return Err(GuardError::Validation {
                    field: "device_scope",
                    message: format!("unknown device {device_id}"),
                });
            }
        }
        match company {
            CompanyScope::Company { name } => {
                if !ctx.company_known(name) {
                    return Err(GuardError::Validation {
                        field: "company_scope",
                        message: format!("unknown company {name:?}"),
                    });
                }
            }
            CompanyScope::Group { root } => {
                if !ctx.company_known(root) {
                    return Err(GuardError::Validation {
                        field: "company_scope",
                        message: format!("unknown company {root:?}"),
                    });
                }
                match ctx.snapshot.corporate_group(root) {
                    Ok(g) if g.root != *root => {
                        return Err(GuardError::Validation {
                            field: "company_scope",
                            message: format!("{root:?} belongs to group {:?}", g.root),
                        })
                    }
                    Err(e) => {
                        return Err(GuardError::Validation {
                            field: "company_scope",
                            message: e.to_string(),
                        })
                    }
                    Ok(_) => {}
                }
            }
            CompanyScope::Blocklist { id } => {
                if !self.blocklists.contains_key(id) {
                    return Err(GuardError::UnknownBlocklist(id.clone()));
                }
            }
        }
        Ok(())
    }

    /// Creates a disabled directive. Needs the controls stage.
    pub fn create(
        &mut self,
        device_scope: DeviceScope,
        company_scope: CompanyScope,
        stage: &StageConfig,
        ctx: &ScopeContext<'_>,
        now_ms: i64,
    ) -> Result<FirewallDirective, GuardError> {
        stage.require(Feature::Controls)?;
        self.validate(&device_scope, &company_scope, ctx)?;
        let id = DirectiveId(format!("dir-{}", self.next_id));
        let directive = FirewallDirective {
            label: self.label(&device_scope, &company_scope, ctx.devices),
            id: id.clone(),
            device_scope,
            company_scope,
            state: DirectiveState::Disabled,
            created_at_ms: now_ms,
        };
        self.next_id += 1;
        self.directives.insert(id, directive.clone());
        Ok(directive)
    }

    pub fn set_state(
        &mut self,
        id: &DirectiveId,
        state: DirectiveState,
        stage: &StageConfig,
    ) -> Result<FirewallDirective, GuardError> {
        stage.require(Feature::Controls)?;
        let d = self
            .directives
            .get_mut(id)
            .ok_or_else(|| GuardError::UnknownDirective(id.clone()))?;
        d.state = state;
        Ok(d.clone())
    }

    /// Adds or replaces a user blocklist. Curated lists cannot be replaced.
    pub fn put_blocklist(&mut self, list: Blocklist, stage: &StageConfig) -> Result<Blocklist, GuardError> {
        stage.require(Feature::Controls)?;
        list.check()?;
        if let Some(existing) = self.blocklists.get(&list.id) {
            if existing.source == BlocklistSource::Curated && list.source != BlocklistSource::Curated {
                return Err(GuardError::Conflict(format!(
                    "blocklist {:?} is curated and cannot be replaced",
                    list.id
                )));
            }
        }
        self.blocklists.insert(list.id.clone(), list.clone());
        Ok(list)
    }

    pub fn set_blocklist_enabled(
        &mut self,
        id: &str,
        enabled: bool,
        stage: &StageConfig,
    ) -> Result<Blocklist, GuardError> {
        stage.require(Feature::Controls)?;
        let list = self
            .blocklists
            .get_mut(id)
            .ok_or_else(|| GuardError::UnknownBlocklist(id.to_owned()))?;
        let previous = list.enabled;
        list.enabled = enabled;
        if let Err(e) = list.check() {
            list.enabled = previous;
            return Err(e);
        }
        Ok(list.clone())
    }

    /// Compiles the enabled directives under the next version number.
    pub fn compile(&mut self, snapshot: &OwnershipSnapshot, now_ms: i64) -> CompiledRuleSet {
        self.last_version += 1;
        compile(
            self.directives.values(),
            snapshot,
            &self.blocklists,
            self.last_version,
            now_ms,
        )
    }

    /// Companies already blocked for every device in `scope`.
    pub fn blocked_companies(&self, scope: &DeviceScope, snapshot: &OwnershipSnapshot) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for d in self.directives.values() {
            if d.is_enabled() && scope.within(&d.device_scope) {
                if let Ok((companies, _)) = scope_companies(&d.company_scope, snapshot, &self.blocklists) {
                    out.extend(companies);
                }
            }
        }
        out
    }

    pub fn export(&self) -> DirectiveExport {
        DirectiveExport {
            schema: DIRECTIVE_SCHEMA.to_owned(),
            version: DIRECTIVE_SCHEMA_VERSION,
            directives: self.directives.values().cloned().collect(),
            blocklists: self
                .blocklists
                .values()
                .filter(|b| b.source == BlocklistSource::User)
                .cloned()
                .collect(),
        }
    }

    /// Imports directives (always disabled) and user blocklists. All or
    /// nothing: any invalid or conflicting entry rejects the whole import.
    pub fn import(
        &mut self,
        export: DirectiveExport,
        stage: &StageConfig,
        ctx: &ScopeContext<'_>,
    ) -> Result<Vec<FirewallDirective>, GuardError> {
        stage.require(Feature::Controls)?;
        if export.schema != DIRECTIVE_SCHEMA || export.version != DIRECTIVE_SCHEMA_VERSION {
            return Err(GuardError::Validation {
                field: "schema",
                message: format!(
                    "expected {DIRECTIVE_SCHEMA} version {DIRECTIVE_SCHEMA_VERSION}, got {} version {}",
                    export.schema, export.version
                ),
            });
        }
        let mut staged = self.clone();
        for b in export.blocklists {
            staged.put_blocklist(b, stage)?;
        }
        let mut imported = Vec::new();
        for d in export.directives {
            if staged.directives.contains_key(&d.id) {
                return Err(GuardError::Conflict(format!("directive {} already exists", d.id)));
            }
            staged.validate(&d.device_scope, &d.company_scope, ctx)?;
            let mut d = d;
            d.state = DirectiveState::Disabled;
            d.label = staged.label(&d.device_scope, &d.company_scope, ctx.devices);
            if let Some(n) = d.id.0.strip_prefix("dir-").and_then(|n| n.parse::<u64>().ok()) {
                staged.next_id = staged.next_id.max(n + 1);
            }
            staged.directives.insert(d.id.clone(), d.clone());
            imported.push(d);
        }
        *self = staged;
        Ok(imported)
    }
}
