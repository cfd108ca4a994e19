use std::collections::{BTreeMap, BTreeSet};

use ipnet::IpNet;
use serde::{Deserialize, Serialize};

use super::{Blocklist, CompanyScope, DeviceScope, DirectiveId, DirectiveState, FirewallDirective};
use crate::flowcap::{DeviceId, FlowRecord};
use crate::resolver::{OwnershipSnapshot, PrefixTable};
use crate::time::TimeWindow;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeviceMatch {
    Any,
    Device { device_id: DeviceId },
}

impl DeviceMatch {
    pub fn matches(&self, device: &DeviceId) -> bool {
        match self {
            DeviceMatch::Any => true,
            DeviceMatch::Device { device_id } => device_id == device,
        }
    }
}

impl From<&DeviceScope> for DeviceMatch {
    fn from(scope: &DeviceScope) -> Self {
        match scope {
            DeviceScope::All => DeviceMatch::Any,
            DeviceScope::Device { device_id } => DeviceMatch::Device {
                device_id: device_id.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleEntry {
    pub directive_id: DirectiveId,
    pub device: DeviceMatch,
    pub prefixes: Vec<IpNet>,
}

/// An enabled directive that currently matches no addresses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InertDirective {
    pub directive_id: DirectiveId,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Allow,
    Block,
}

#[derive(Serialize, Deserialize)]
struct RuleSetRepr {
    version: u64,
    generated_at_ms: i64,
    resolver_generation: u64,
    entries: Vec<RuleEntry>,
    inert: Vec<InertDirective>,
}

/// The IP-level realisation of the enabled directives.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "RuleSetRepr", into = "RuleSetRepr")]
pub struct CompiledRuleSet {
    pub version: u64,
    pub generated_at_ms: i64,
    /// Resolver generation the prefixes were drawn from.
    pub resolver_generation: u64,
    pub entries: Vec<RuleEntry>,
    pub inert: Vec<InertDirective>,
    index: PrefixTable<Vec<usize>>,
}

impl PartialEq for CompiledRuleSet {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.generated_at_ms == other.generated_at_ms
            && self.resolver_generation == other.resolver_generation
            && self.entries == other.entries
            && self.inert == other.inert
    }
}

impl From<RuleSetRepr> for CompiledRuleSet {
    fn from(r: RuleSetRepr) -> Self {
        CompiledRuleSet::new(r.version, r.generated_at_ms, r.resolver_generation, r.entries, r.inert)
    }
}

impl From<CompiledRuleSet> for RuleSetRepr {
    fn from(r: CompiledRuleSet) -> Self {
        RuleSetRepr {
            version: r.version,
            generated_at_ms: r.generated_at_ms,
            resolver_generation: r.resolver_generation,
            entries: r.entries,
            inert: r.inert,
        }
    }
}

impl CompiledRuleSet {
    pub fn new(
        version: u64,
        generated_at_ms: i64,
        resolver_generation: u64,
        entries: Vec<RuleEntry>,
        inert: Vec<InertDirective>,
    ) -> Self {
        let mut index: PrefixTable<Vec<usize>> = PrefixTable::new();
        for (i, e) in entries.iter().enumerate() {
            for p in &e.prefixes {
                match index.get(p) {
                    Some(existing) => {
                        let mut v = existing.clone();
                        v.push(i);
                        index.insert(*p, v);
                    }
                    None => {
                        index.insert(*p, vec![i]);
                    }
                }
            }
        }
        Self {
            version,
            generated_at_ms,
            resolver_generation,
            entries,
            inert,
            index,
        }
    }

    /// The rule set in force before anything is compiled.
    pub fn empty() -> Self {
        Self::new(0, 0, 0, Vec::new(), Vec::new())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry indices matching the flow, in entry order.
    pub fn matching_entries(&self, flow: &FlowRecord) -> Vec<usize> {
        let mut hits: Vec<usize> = self
            .index
            .matches(flow.dst_ip)
            .into_iter()
            .flat_map(|(_, idx)| idx.iter().copied())
            .filter(|&i| self.entries[i].device.matches(&flow.device_id))
            .collect();
        hits.sort_unstable();
        hits.dedup();
        hits
    }
}

/// BLOCK iff some entry matches both the flow's device and its remote address.
pub fn decide(flow: &FlowRecord, ruleset: &CompiledRuleSet) -> Verdict {
    let blocked = ruleset
        .index
        .matches(flow.dst_ip)
        .into_iter()
        .any(|(_, idx)| idx.iter().any(|&i| ruleset.entries[i].device.matches(&flow.device_id)));
    if blocked {
        Verdict::Block
    } else {
        Verdict::Allow
    }
}

/// The companies and raw prefixes a scope stands for, or why it is inert.
pub fn scope_companies(
    scope: &CompanyScope,
    snapshot: &OwnershipSnapshot,
    blocklists: &BTreeMap<String, Blocklist>,
) -> Result<(BTreeSet<String>, BTreeSet<IpNet>), String> {
    match scope {
        CompanyScope::Company { name } => Ok((BTreeSet::from([name.clone()]), BTreeSet::new())),
        CompanyScope::Group { root } => Ok((snapshot.group_members(root), BTreeSet::new())),
        CompanyScope::Blocklist { id } => match blocklists.get(id) {
            None => Err(format!("blocklist {id:?} no longer exists")),
            Some(b) if !b.enabled => Err(format!("blocklist {id:?} is disabled")),
            Some(b) => Ok((b.companies.clone(), b.prefixes.clone())),
        },
    }
}

fn directive_prefixes(
    scope: &CompanyScope,
    snapshot: &OwnershipSnapshot,
    blocklists: &BTreeMap<String, Blocklist>,
) -> Result<Vec<IpNet>, String> {
    let (companies, raw) = scope_companies(scope, snapshot, blocklists)?;
    let mut prefixes = snapshot.prefixes_for(&companies);
    prefixes.extend(raw);
    prefixes.sort();
    prefixes.dedup();
    if prefixes.is_empty() {
        let names: Vec<&str> = companies.iter().map(String::as_str).collect();
        return Err(format!("no known prefixes for {}", names.join(", ")));
    }
    Ok(prefixes)
}

/// Compiles enabled directives. Output is deterministic for fixed inputs:
/// entries follow directive id order and prefixes are sorted.
pub fn compile<'a>(
    directives: impl IntoIterator<Item = &'a FirewallDirective>,
    snapshot: &OwnershipSnapshot,
    blocklists: &BTreeMap<String, Blocklist>,
    version: u64,
    now_ms: i64,
) -> CompiledRuleSet {
    let mut sorted: Vec<&FirewallDirective> = directives
        .into_iter()
        .filter(|d| d.state == DirectiveState::Enabled)
        .collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut entries = Vec::new();
    let mut inert = Vec::new();
    for d in sorted {
        match directive_prefixes(&d.company_scope, snapshot, blocklists) {
            Ok(prefixes) => entries.push(RuleEntry {
                directive_id: d.id.clone(),
                device: DeviceMatch::from(&d.device_scope),
                prefixes,
            }),
            Err(reason) => inert.push(InertDirective {
                directive_id: d.id.clone(),
                reason,
            }),
        }
    }
    CompiledRuleSet::new(version, now_ms, snapshot.generation(), entries, inert)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceImpact {
    pub device_id: DeviceId,
    pub matched_bytes: u64,
    pub matched_flows: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockImpactPreview {
    pub directive_id: DirectiveId,
    pub window: TimeWindow,
    pub matched_bytes: u64,
    pub matched_flows: u64,
    /// All stored traffic in the window, for scale.
    pub window_bytes: u64,
    pub window_flows: u64,
    pub affected_companies: Vec<String>,
    pub per_device: Vec<DeviceImpact>,
    /// Set when the directive would currently match nothing.
    pub inert: Option<String>,
}

/// What the directive would have blocked among stored flows in `window`,
/// counted by running [`decide`] over each flow with the directive compiled
/// as if enabled. Flows are paired with the company they were attributed to.
pub fn preview_impact<'a>(
    directive: &FirewallDirective,
    window: &TimeWindow,
    snapshot: &OwnershipSnapshot,
    blocklists: &BTreeMap<String, Blocklist>,
    flows: impl IntoIterator<Item = (&'a FlowRecord, &'a str)>,
) -> BlockImpactPreview {
    let armed = FirewallDirective {
        state: DirectiveState::Enabled,
        ..directive.clone()
    };
    let rules = compile([&armed], snapshot, blocklists, 0, 0);
    let mut preview = BlockImpactPreview {
        directive_id: directive.id.clone(),
        window: *window,
        matched_bytes: 0,
        matched_flows: 0,
        window_bytes: 0,
        window_flows: 0,
        affected_companies: Vec::new(),
        per_device: Vec::new(),
        inert: rules.inert.first().map(|i| i.reason.clone()),
    };
    let mut companies = BTreeSet::new();
    let mut per_device: BTreeMap<DeviceId, (u64, u64)> = BTreeMap::new();
    for (flow, company) in flows {
        if !window.contains(flow.window_start_ms) {
            continue;
        }
        preview.window_bytes += flow.byte_count;
        preview.window_flows += 1;
        if decide(flow, &rules) == Verdict::Block {
            preview.matched_bytes += flow.byte_count;
            preview.matched_flows += 1;
            companies.insert(company.to_owned());
            let e = per_device.entry(flow.device_id.clone()).or_default();
            e.0 += flow.byte_count;
            e.1 += 1;
        }
    }
    preview.affected_companies = companies.into_iter().collect();
    preview.per_device = per_device
        .into_iter()
        .map(|(device_id, (b, f))| DeviceImpact {
            device_id,
            matched_bytes: b,
            matched_flows: f,
        })
        .collect();
    preview
}
