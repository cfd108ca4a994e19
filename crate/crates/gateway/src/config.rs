//! Gateway configuration: one TOML file plus a few environment overrides.
//!
//! ```toml
//! bind = "127.0.0.1"
//! port = 8710
//! data_dir = "/var/lib/hearth/data"
//! secret_dir = "/var/lib/hearth/secret"
//! fixtures = "/etc/hearth/fixtures.tsv"
//! home_region = "EU"
//! ```
//!
//! `HEARTH_PORT`, `HEARTH_SALT`, `HEARTH_FIXTURES`, `HEARTH_HOME_REGION` and
//! `HEARTH_STAGE` override the file; `HEARTH_DATA_DIR` and
//! `HEARTH_ADMIN_TOKEN` are also honoured.

use std::io::{Read, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hearth_core::flowcap::Salt;
use hearth_core::guard::{EnforcementAdapter, NftScriptAdapter, SimulatedAdapter};
use hearth_core::household::HouseholdDeps;
use hearth_core::resolver::{HomeRegion, Provider, RecordedProvider};
use hearth_core::store::salt;
use hearth_core::time::DAY_MS;
use hearth_core::{HouseholdConfig, Stage};
use serde::Deserialize;
use thiserror::Error;

pub const DEFAULT_PORT: u16 = 8710;
pub const SALT_FILE: &str = "salt";
pub const TOKEN_FILE: &str = "admin-token";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{var}: {message}")]
    Env { var: &'static str, message: String },
    #[error("invalid {field}: {message}")]
    Invalid { field: &'static str, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnforcementConfig {
    #[default]
    Simulated,
    /// Writes an nftables script and optionally runs `command <script>`.
    Nftables {
        script: PathBuf,
        #[serde(default)]
        command: Option<Vec<String>>,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub bind: IpAddr,
    pub port: u16,
    /// Journal, audit log and directive state.
    pub data_dir: PathBuf,
    /// Salt and admin token; kept apart from the data.
    pub secret_dir: PathBuf,
    /// Used verbatim instead of the salt file when set.
    pub salt: Option<String>,
    pub admin_token: Option<String>,
    pub fixtures: Option<PathBuf>,
    pub curriculum_dir: Option<PathBuf>,
    pub home_region: String,
    /// Forces the stage at startup.
    pub stage: Option<u8>,
    pub retention_days: u32,
    /// JSON-lines recording answered in place of a live lookup provider.
    pub provider_recording: Option<PathBuf>,
    /// LAN interface to capture from; none means replay only.
    pub capture_interface: Option<String>,
    pub enforcement: EnforcementConfig,
    pub tick_secs: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: DEFAULT_PORT,
            data_dir: PathBuf::from("hearth/data"),
            secret_dir: PathBuf::from("hearth/secret"),
            salt: None,
            admin_token: None,
            fixtures: None,
            curriculum_dir: None,
            home_region: "EU".into(),
            stage: None,
            retention_days: 42,
            provider_recording: None,
            capture_interface: None,
            enforcement: EnforcementConfig::Simulated,
            tick_secs: 60,
        }
    }
}

impl GatewayConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.message().to_owned(),
        })
    }

    /// Applies `HEARTH_*` overrides read through `get`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = get("HEARTH_PORT") {
            self.port = v.trim().parse().map_err(|e| ConfigError::Env {
                var: "HEARTH_PORT",
                message: format!("{e}"),
            })?;
        }
        if let Some(v) = get("HEARTH_SALT") {
            self.salt = Some(v);
        }
        if let Some(v) = get("HEARTH_FIXTURES") {
            self.fixtures = Some(PathBuf::from(v));
        }
        if let Some(v) = get("HEARTH_HOME_REGION") {
            self.home_region = v;
        }
        if let Some(v) = get("HEARTH_STAGE") {
            self.stage = Some(v.trim().parse().map_err(|e| ConfigError::Env {
                var: "HEARTH_STAGE",
                message: format!("{e}"),
            })?);
        }
        if let Some(v) = get("HEARTH_DATA_DIR") {
            self.data_dir = PathBuf::from(v);
        }
        if let Some(v) = get("HEARTH_ADMIN_TOKEN") {
            self.admin_token = Some(v);
        }
        Ok(())
    }

    pub fn from_env(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok().filter(|v| !v.is_empty()))?;
        Ok(cfg)
    }

    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.bind, self.port)
    }

    pub fn household_config(&self) -> Result<HouseholdConfig, ConfigError> {
        let home_region: HomeRegion = self.home_region.parse().map_err(|e| ConfigError::Invalid {
            field: "home_region",
            message: format!("{e}"),
        })?;
        let stage = self
            .stage
            .map(Stage::try_from)
            .transpose()
            .map_err(|e| ConfigError::Invalid {
                field: "stage",
                message: e.to_string(),
            })?;
        if self.retention_days == 0 {
            return Err(ConfigError::Invalid {
                field: "retention_days",
                message: "must be at least 1".into(),
            });
        }
        Ok(HouseholdConfig {
            data_dir: Some(self.data_dir.clone()),
            fixtures_path: self.fixtures.clone(),
            curriculum_dir: self.curriculum_dir.clone(),
            home_region,
            stage,
            retention_ms: i64::from(self.retention_days) * DAY_MS,
            ..HouseholdConfig::default()
        })
    }

    pub fn salt(&self) -> Result<Salt, ConfigError> {
        match &self.salt {
            Some(secret) => salt::from_secret(secret).ok_or(ConfigError::Invalid {
                field: "salt",
                message: "must not be empty".into(),
            }),
            None => {
                let path = self.secret_dir.join(SALT_FILE);
                salt::load_or_create(&path).map_err(|e| ConfigError::Parse {
                    path,
                    message: e.to_string(),
                })
            }
        }
    }

    /// The configured admin token, or the one in the secret directory
    /// (generated on first start).
    pub fn admin_token(&self) -> Result<String, ConfigError> {
        if let Some(t) = self.admin_token.as_ref().filter(|t| !t.is_empty()) {
            return Ok(t.clone());
        }
        let path = self.secret_dir.join(TOKEN_FILE);
        let read_err = |source| ConfigError::Read {
            path: path.clone(),
            source,
        };
        match std::fs::read_to_string(&path) {
            Ok(t) if !t.trim().is_empty() => Ok(t.trim().to_owned()),
            Ok(_) => Err(ConfigError::Parse {
                path: path.clone(),
                message: "empty admin token".into(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let token = random_hex(24).map_err(read_err)?;
                write_private(&path, &token).map_err(read_err)?;
                Ok(token)
            }
            Err(e) => Err(read_err(e)),
        }
    }

    /// The admin token a client on this host can present, without creating
    /// one.
    pub fn existing_admin_token(&self) -> Option<String> {
        if let Some(t) = self.admin_token.as_ref().filter(|t| !t.is_empty()) {
            return Some(t.clone());
        }
        let t = std::fs::read_to_string(self.secret_dir.join(TOKEN_FILE)).ok()?;
        Some(t.trim().to_owned()).filter(|t| !t.is_empty())
    }

    /// Base URL for clients on this host.
    pub fn local_url(&self) -> String {
        let ip = if self.bind.is_unspecified() {
            match self.bind {
                IpAddr::V4(_) => IpAddr::V4(Ipv4Addr::LOCALHOST),
                IpAddr::V6(_) => IpAddr::V6(std::net::Ipv6Addr::LOCALHOST),
            }
        } else {
            self.bind
        };
        format!("http://{}", SocketAddr::new(ip, self.port))
    }

    pub fn deps(&self) -> Result<HouseholdDeps, ConfigError> {
        let mut deps = HouseholdDeps::new(self.salt()?);
        if let Some(path) = &self.provider_recording {
            let p = RecordedProvider::load(path).map_err(|e| ConfigError::Parse {
                path: path.clone(),
                message: e.to_string(),
            })?;
            deps.provider = Some(Arc::new(p) as Arc<dyn Provider>);
        }
        deps.adapter = match &self.enforcement {
            EnforcementConfig::Simulated => Arc::new(SimulatedAdapter::new()) as Arc<dyn EnforcementAdapter>,
            EnforcementConfig::Nftables { script, command } => {
                Arc::new(NftScriptAdapter::new(script.clone(), command.clone()))
            }
        };
        Ok(deps)
    }
}

fn random_hex(n: usize) -> std::io::Result<String> {
    let mut bytes = vec![0u8; n];
    std::fs::File::open("/dev/urandom")?.read_exact(&mut bytes)?;
    Ok(bytes.iter().map(|b| format!("{b:02x}")).collect())
}

fn write_private(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut opts = std::fs::OpenOptions::new();
    opts.write(true).create_new(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts.open(path)?;
    writeln!(f, "{text}")?;
    f.sync_all()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn file_then_env() {
        let mut cfg = GatewayConfig::parse(
            Path::new("hearth.toml"),
            "port = 9000\nhome_region = \"US\"\n[enforcement]\nkind = \"nftables\"\nscript = \"/tmp/x.nft\"\n",
        )
        .unwrap();
        assert_eq!(cfg.port, 9000);
        assert_eq!(cfg.bind, IpAddr::V4(Ipv4Addr::LOCALHOST));
        assert!(matches!(cfg.enforcement, EnforcementConfig::Nftables { .. }));
        let env: HashMap<&str, &str> = [
            ("HEARTH_PORT", "9100"),
            ("HEARTH_SALT", "pepper"),
            ("HEARTH_FIXTURES", "/f.tsv"),
            ("HEARTH_HOME_REGION", "EU"),
            ("HEARTH_STAGE", "2"),
        ]
        .into();
        cfg.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(cfg.port, 9100);
        assert_eq!(cfg.salt.as_deref(), Some("pepper"));
        assert_eq!(cfg.fixtures.as_deref(), Some(Path::new("/f.tsv")));
        let hc = cfg.household_config().unwrap();
        assert_eq!(hc.stage, Some(Stage::Curriculum));
        assert_eq!(hc.home_region, HomeRegion::eu());
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(GatewayConfig::parse(Path::new("x"), "prot = 1").is_err());
        let mut cfg = GatewayConfig::default();
        assert!(cfg.apply_env(|k| (k == "HEARTH_PORT").then(|| "http".into())).is_err());
        cfg.stage = Some(4);
        assert!(matches!(
            cfg.household_config(),
            Err(ConfigError::Invalid { field: "stage", .. })
        ));
    }

    #[test]
    fn token_is_generated_once() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GatewayConfig {
            secret_dir: dir.path().to_owned(),
            ..Default::default()
        };
        let a = cfg.admin_token().unwrap();
        assert_eq!(a.len(), 48);
        assert_eq!(cfg.admin_token().unwrap(), a);
    }
}
