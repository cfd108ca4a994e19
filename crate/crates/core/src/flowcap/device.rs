use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{DeviceId, MacAddr};

/// Name prefix given to devices seen on the wire but absent from the device map.
pub const UNRECOGNISED_PREFIX: &str = "unrecognised-";

/// Secret mixed into every device id. Never serialised.
#[derive(Clone)]
pub struct Salt(Vec<u8>);

impl Salt {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, DeviceError> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(DeviceError::EmptySalt);
        }
        Ok(Salt(bytes))
    }
}

impl fmt::Debug for Salt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Salt(<redacted>)")
    }
}

/// `hex(sha256(salt ‖ mac))`, truncated to 128 bits.
pub fn device_id(salt: &Salt, mac: MacAddr) -> DeviceId {
    let mut hasher = Sha256::new();
    hasher.update(&salt.0);
    hasher.update(mac.0);
    let digest = hasher.finalize();
    DeviceId(hex::encode(&digest[..16]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Device {
    pub device_id: DeviceId,
    pub friendly_name: String,
    pub first_seen_ms: i64,
    pub last_seen_ms: i64,
}

impl Device {
    pub fn is_auto_named(&self) -> bool {
        self.friendly_name.starts_with(UNRECOGNISED_PREFIX)
    }

    fn touch(&mut self, ts_ms: i64) {
        if self.first_seen_ms == 0 || ts_ms < self.first_seen_ms {
            self.first_seen_ms = ts_ms;
        }
        self.last_seen_ms = self.last_seen_ms.max(ts_ms);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("device salt must not be empty")]
    EmptySalt,
    #[error("device is already registered as {existing:?}; refusing to rename it to {requested:?}")]
    Conflict { existing: String, requested: String },
    #[error("device name must not be empty")]
    EmptyName,
    #[error("unknown device {0}")]
    Unknown(DeviceId),
}

/// Salted device table. Raw MACs are hashed on the way in and never stored.
#[derive(Debug, Clone)]
pub struct DeviceRegistry {
    salt: Salt,
    devices: BTreeMap<DeviceId, Device>,
}

impl DeviceRegistry {
    pub fn new(salt: Salt) -> Self {
        Self {
            salt,
            devices: BTreeMap::new(),
        }
    }

    pub fn with_devices(salt: Salt, devices: impl IntoIterator<Item = Device>) -> Self {
        Self {
            salt,
            devices: devices.into_iter().map(|d| (d.device_id.clone(), d)).collect(),
        }
    }

    pub fn id_for(&self, mac: MacAddr) -> DeviceId {
        device_id(&self.salt, mac)
    }

    /// Registers `mac` under `name`. Re-registering with the same name is a
    /// no-op; an auto-assigned name may be replaced; any other rename is a
    /// conflict.
    pub fn register(&mut self, mac: MacAddr, name: &str) -> Result<Device, DeviceError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(DeviceError::EmptyName);
        }
        let id = self.id_for(mac);
        match self.devices.get_mut(&id) {
            Some(existing) if existing.friendly_name == name => Ok(existing.clone()),
            Some(existing) if existing.is_auto_named() => {
                existing.friendly_name = name.to_owned();
                Ok(existing.clone())
            }
            Some(existing) => Err(DeviceError::Conflict {
                existing: existing.friendly_name.clone(),
                requested: name.to_owned(),
            }),
            None => {
                let device = Device {
                    device_id: id.clone(),
                    friendly_name: name.to_owned(),
                    first_seen_ms: 0,
                    last_seen_ms: 0,
                };
                self.devices.insert(id, device.clone());
                Ok(device)
            }
        }
    }

    /// Looks up the device for a packet seen at `ts_ms`, auto-registering
    /// unknown hardware, and advances its seen times.
    pub fn observe(&mut self, mac: MacAddr, ts_ms: i64) -> DeviceId {
        let id = self.id_for(mac);
        let device = self.devices.entry(id.clone()).or_insert_with(|| Device {
            device_id: id.clone(),
            friendly_name: format!("{UNRECOGNISED_PREFIX}{}", &id.0[..8]),
            first_seen_ms: 0,
            last_seen_ms: 0,
        });
        device.touch(ts_ms);
        id
    }

    pub fn rename(&mut self, id: &DeviceId, name: &str) -> Result<Device, DeviceError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(DeviceError::EmptyName);
        }
        let device = self
            .devices
            .get_mut(id)
            .ok_or_else(|| DeviceError::Unknown(id.clone()))?;
        device.friendly_name = name.to_owned();
        Ok(device.clone())
    }

    pub fn get(&self, id: &DeviceId) -> Option<&Device> {
        self.devices.get(id)
    }

    /// Inserts or replaces a device record as-is (reload and merge path).
    pub fn upsert(&mut self, device: Device) {
        self.devices.insert(device.device_id.clone(), device);
    }

    pub fn remove(&mut self, id: &DeviceId) -> Option<Device> {
        self.devices.remove(id)
    }

    pub fn devices(&self) -> impl Iterator<Item = &Device> {
        self.devices.values()
    }

    pub fn find_by_name(&self, name: &str) -> Option<&Device> {
        self.devices.values().find(|d| d.friendly_name == name)
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceMapEntry {
    pub mac: MacAddr,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("device map line {line}: {message}")]
pub struct DeviceMapError {
    pub line: usize,
    pub message: String,
}

/// Parses `MAC<TAB>name` lines; blank lines and `#` comments are skipped.
pub fn parse_device_map(text: &str) -> Result<Vec<DeviceMapEntry>, DeviceMapError> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let err = |message: String| DeviceMapError { line: idx + 1, message };
        let (mac, name) = line
            .split_once('\t')
            .ok_or_else(|| err("expected MAC<TAB>name".into()))?;
        let mac = mac.parse::<MacAddr>().map_err(|e| err(e.to_string()))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(err("empty device name".into()));
        }
        entries.push(DeviceMapEntry {
            mac,
            name: name.to_owned(),
        });
    }
    Ok(entries)
}
