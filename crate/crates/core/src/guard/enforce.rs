//! Rule-set installation.
//!
//! The [`Enforcer`] holds the rule set in force behind an `Arc` swap: readers
//! clone the `Arc` under a read lock and evaluate a whole, immutable version,
//! so no reader ever sees a mix of two versions. A new version becomes current
//! only after the adapter reports it installed.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use ipnet::IpNet;
use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use super::compile::{decide, CompiledRuleSet, DeviceMatch, Verdict};
use crate::flowcap::{DeviceId, FlowRecord, MacAddr};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdapterError {
    #[error("adapter {adapter} failed: {message}")]
    Failed { adapter: String, message: String },
    #[error("no hardware address known for device {0}")]
    UnknownDevice(DeviceId),
}

pub trait EnforcementAdapter: Send + Sync {
    fn name(&self) -> &str;
    /// Installs `ruleset` in full, replacing whatever was installed before.
    /// On error the previously installed state must remain in effect.
    fn install(&self, ruleset: &CompiledRuleSet) -> Result<(), AdapterError>;
}

#[derive(Debug)]
pub struct Enforcer {
    current: RwLock<Arc<CompiledRuleSet>>,
    apply_lock: Mutex<()>,
}

impl Default for Enforcer {
    fn default() -> Self {
        Self {
            current: RwLock::new(Arc::new(CompiledRuleSet::empty())),
            apply_lock: Mutex::new(()),
        }
    }
}

impl Enforcer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current(&self) -> Arc<CompiledRuleSet> {
        self.current.read().clone()
    }

    /// Verdict plus the version that produced it.
    pub fn decide(&self, flow: &FlowRecord) -> (Verdict, u64) {
        let rules = self.current();
        (decide(flow, &rules), rules.version)
    }

    /// Installs through `adapter`, then makes `ruleset` current. Applies are
    /// serialised; a failed install leaves the current version untouched.
    pub fn apply(&self, ruleset: CompiledRuleSet, adapter: &dyn EnforcementAdapter) -> Result<u64, AdapterError> {
        let _serial = self.apply_lock.lock();
        adapter.install(&ruleset)?;
        let version = ruleset.version;
        *self.current.write() = Arc::new(ruleset);
        Ok(version)
    }
}

/// In-process stand-in for a firewall. Blocked flows are dropped silently:
/// replay reports them as BLOCK and nothing else is signalled.
#[derive(Debug)]
pub struct SimulatedAdapter {
    installed: RwLock<Arc<CompiledRuleSet>>,
    fail_next: AtomicBool,
}

impl Default for SimulatedAdapter {
    fn default() -> Self {
        Self {
            installed: RwLock::new(Arc::new(CompiledRuleSet::empty())),
            fail_next: AtomicBool::new(false),
        }
    }
}

impl SimulatedAdapter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes the next install fail.
    pub fn fail_next_install(&self) {
        self.fail_next.store(true, Ordering::SeqCst);
    }

    pub fn installed_version(&self) -> u64 {
        self.installed.read().version
    }

    /// Verdicts the simulated data path gives these flows.
    pub fn replay<'a>(&self, flows: impl IntoIterator<Item = &'a FlowRecord>) -> Vec<Verdict> {
        let rules = self.installed.read().clone();
        flows.into_iter().map(|f| decide(f, &rules)).collect()
    }
}

impl EnforcementAdapter for SimulatedAdapter {
    fn name(&self) -> &str {
        "simulated"
    }

    fn install(&self, ruleset: &CompiledRuleSet) -> Result<(), AdapterError> {
        if self.fail_next.swap(false, Ordering::SeqCst) {
            return Err(AdapterError::Failed {
                adapter: self.name().into(),
                message: "injected failure".into(),
            });
        }
        *self.installed.write() = Arc::new(ruleset.clone());
        Ok(())
    }
}

/// Writes an nftables script and optionally loads it.
///
/// The script deletes and recreates `table inet hearth` in one file, which
/// `nft -f` applies as a single transaction. Matching traffic is dropped
/// silently in the `forward` hook, in both directions. Device-scoped entries
/// match on Ethernet address, so the gateway must forward at layer 2 or see
/// the LAN interface (the same requirement as capture). Hardware addresses
/// are supplied at runtime and never persisted.
pub struct NftScriptAdapter {
    path: PathBuf,
    command: Option<Vec<String>>,
    macs: RwLock<HashMap<DeviceId, MacAddr>>,
}

impl NftScriptAdapter {
    /// `command`, if given, runs after the script is written with the script
    /// path appended as its last argument (for example `["nft", "-f"]`).
    pub fn new(path: impl Into<PathBuf>, command: Option<Vec<String>>) -> Self {
        Self {
            path: path.into(),
            command,
            macs: RwLock::new(HashMap::new()),
        }
    }

    pub fn set_mac(&self, device: DeviceId, mac: MacAddr) {
        self.macs.write().insert(device, mac);
    }

    pub fn render(&self, ruleset: &CompiledRuleSet) -> Result<String, AdapterError> {
        let macs = self.macs.read();
        let mut out = String::new();
        let _ = writeln!(out, "# hearth rule set version {}", ruleset.version);
        out.push_str("table inet hearth {}\ndelete table inet hearth\n");
        out.push_str(
            "table inet hearth {\n  chain forward {\n    type filter hook forward priority 0; policy accept;\n",
        );
        for entry in &ruleset.entries {
            let (v4, v6): (Vec<&IpNet>, Vec<&IpNet>) = entry.prefixes.iter().partition(|p| matches!(p, IpNet::V4(_)));
            let (out_mac, in_mac) = match &entry.device {
                DeviceMatch::Any => (String::new(), String::new()),
                DeviceMatch::Device { device_id } => {
                    let mac = macs
                        .get(device_id)
                        .ok_or_else(|| AdapterError::UnknownDevice(device_id.clone()))?;
                    (format!("ether saddr {mac} "), format!("ether daddr {mac} "))
                }
            };
            for (family, nets) in [("ip", v4), ("ip6", v6)] {
                if nets.is_empty() {
                    continue;
                }
                let set = nets.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", ");
                let _ = writeln!(
                    out,
                    "    {out_mac}{family} daddr {{ {set} }} drop comment \"{}\"",
                    entry.directive_id
                );
                let _ = writeln!(
                    out,
                    "    {in_mac}{family} saddr {{ {set} }} drop comment \"{}\"",
                    entry.directive_id
                );
            }
        }
        out.push_str("  }\n}\n");
        Ok(out)
    }

    fn failed(&self, message: String) -> AdapterError {
        AdapterError::Failed {
            adapter: self.name().into(),
            message,
        }
    }
}

impl EnforcementAdapter for NftScriptAdapter {
    fn name(&self) -> &str {
        "nftables"
    }

    fn install(&self, ruleset: &CompiledRuleSet) -> Result<(), AdapterError> {
        let script = self.render(ruleset)?;
        let tmp = self.path.with_extension("tmp");
        std::fs::write(&tmp, script).map_err(|e| self.failed(format!("write {}: {e}", tmp.display())))?;
        if let Some(cmd) = &self.command {
            let (program, args) = cmd.split_first().ok_or_else(|| self.failed("empty command".into()))?;
            let status = Command::new(program)
                .args(args)
                .arg(&tmp)
                .status()
                .map_err(|e| self.failed(format!("run {program}: {e}")))?;
            if !status.success() {
                let _ = std::fs::remove_file(&tmp);
                return Err(self.failed(format!("{program} exited with {status}")));
            }
        }
        std::fs::rename(&tmp, &self.path).map_err(|e| self.failed(format!("rename to {}: {e}", self.path.display())))
    }
}
