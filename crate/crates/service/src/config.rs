//! Service configuration: one TOML file, overridable from the environment.
//!
//! Any key can be overridden with `TWIN_<SECTION>__<KEY>`, for example
//! `TWIN_CLOUD__PASSWORD=...` or `TWIN_POLL__INTERVAL_S=0.5`. Values are read
//! as TOML when they parse as such and as plain strings otherwise, so an id
//! made of digits has to be quoted: `TWIN_METERING__OUTLETS__PDU1='"7"'`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;
use twin_core::{EnergyRange, HypervisorId};
use twin_mock::MockConfig;

use crate::cloud::{EndpointPaths, ServiceOverrides};

pub const ENV_PREFIX: &str = "TWIN_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("missing required keys: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudMode {
    #[default]
    Openstack,
    /// Run against an embedded mock cloud.
    Mock,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudSection {
    pub mode: CloudMode,
    pub auth_url: Option<String>,
    pub username: Option<String>,
    pub password: Option<String>,
    /// Name of an environment variable holding the password.
    pub password_env: Option<String>,
    pub project_name: Option<String>,
    pub domain: String,
    pub request_timeout_s: f64,
    pub paths: EndpointPaths,
    pub endpoints: ServiceOverrides,
}

impl Default for CloudSection {
    fn default() -> Self {
        Self {
            mode: CloudMode::Openstack,
            auth_url: None,
            username: None,
            password: None,
            password_env: None,
            project_name: None,
            domain: "Default".into(),
            request_timeout_s: 10.0,
            paths: EndpointPaths::default(),
            endpoints: ServiceOverrides::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PollSection {
    pub interval_s: f64,
    pub metering_every: u32,
    pub stale_after: u32,
    pub power_timeout_s: f64,
    pub migrate_timeout_s: f64,
    pub retry_attempts: u32,
    pub retry_base_ms: u64,
}

impl Default for PollSection {
    fn default() -> Self {
        Self {
            interval_s: 1.0,
            metering_every: 5,
            stale_after: 3,
            power_timeout_s: 60.0,
            migrate_timeout_s: 300.0,
            retry_attempts: 3,
            retry_base_ms: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeteringSection {
    /// Absolute URL of the metering document.
    pub url: Option<String>,
    /// Local metering document, re-read on every metering tick.
    pub file: Option<PathBuf>,
    /// Take the URL from the token's `metering` catalog entry.
    pub from_catalog: bool,
    /// Outlet name to hypervisor id.
    pub outlets: BTreeMap<String, HypervisorId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerDriverKind {
    #[default]
    Mock,
    Epdu,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HostPowerSection {
    pub driver: PowerDriverKind,
    /// Base URL of the ePDU switching API.
    pub epdu_url: Option<String>,
    pub force_host_off: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub listen: String,
    pub heartbeat_s: f64,
    pub retention: usize,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self { listen: "127.0.0.1:8080".into(), heartbeat_s: 10.0, retention: crate::hub::DEFAULT_RETENTION }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwinConfig {
    pub cloud: CloudSection,
    pub poll: PollSection,
    pub energy: EnergyRange,
    pub metering: MeteringSection,
    pub host_power: HostPowerSection,
    pub gateway: GatewaySection,
    pub mock: MockConfig,
}

/// Resolved Keystone credentials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CredentialValues {
    pub auth_url: String,
    pub username: String,
    pub password: String,
    pub project_name: String,
    pub domain: String,
}

fn env_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("just inserted"),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

/// Returns how many variables applied.
fn apply_env(table: &mut toml::Table, vars: impl IntoIterator<Item = (String, String)>) -> usize {
    let mut applied = 0;
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let path: Vec<String> = rest.split("__").map(str::to_ascii_lowercase).collect();
        if path.len() < 2 || path.iter().any(String::is_empty) {
            continue;
        }
        let mut cursor = &mut *table;
        for key in &path[..path.len() - 1] {
            let entry = cursor
                .entry(key.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if !entry.is_table() {
                *entry = toml::Value::Table(toml::Table::new());
            }
            cursor = entry.as_table_mut().expect("made a table");
        }
        cursor.insert(path[path.len() - 1].clone(), env_value(&raw));
        applied += 1;
    }
    applied
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} must be a positive number of seconds, got {v}")))
    }
}

impl TwinConfig {
    /// Parses `text` with the given environment applied on top.
    pub fn parse_with_env(
        text: &str,
        origin: &str,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse(format!("{origin}: {e}")))?;
        let config: TwinConfig = if apply_env(&mut table, env) == 0 {
            // straight from the file so diagnostics point at its lines
            toml::from_str(text)
        } else {
            toml::from_str(&toml::to_string(&table).expect("tables serialise"))
        }
        .map_err(|e| ConfigError::Parse(format!("{origin}: {e}")))?;
        config.check()?;
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::parse_with_env(text, "config", std::iter::empty())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        Self::parse_with_env(&text, &path.display().to_string(), std::env::vars())
    }

    fn check(&self) -> Result<(), ConfigError> {
        positive("poll.interval_s", self.poll.interval_s)?;
        positive("poll.power_timeout_s", self.poll.power_timeout_s)?;
        positive("poll.migrate_timeout_s", self.poll.migrate_timeout_s)?;
        positive("cloud.request_timeout_s", self.cloud.request_timeout_s)?;
        positive("gateway.heartbeat_s", self.gateway.heartbeat_s)?;
        if self.poll.metering_every == 0 || self.poll.stale_after == 0 || self.poll.retry_attempts == 0 {
            return Err(ConfigError::Invalid(
                "poll.metering_every, poll.stale_after and poll.retry_attempts must be at least 1".into(),
            ));
        }
        EnergyRange::new(self.energy.min_watts, self.energy.max_watts)
            .map_err(|e| ConfigError::Invalid(format!("energy: {e}")))?;
        let sources = [self.metering.url.is_some(), self.metering.file.is_some(), self.metering.from_catalog];
        if sources.iter().filter(|s| **s).count() > 1 {
            return Err(ConfigError::Invalid(
                "metering: set at most one of url, file and from_catalog".into(),
            ));
        }
        if self.host_power.driver == PowerDriverKind::Epdu && self.host_power.epdu_url.is_none() {
            return Err(ConfigError::Missing(vec!["host_power.epdu_url".into()]));
        }
        self.mock.check().map_err(|e| ConfigError::Invalid(format!("mock: {e}")))?;
        Ok(())
    }

    /// Credentials for a real cloud, naming every key that is missing.
    pub fn credentials(&self) -> Result<CredentialValues, ConfigError> {
        let c = &self.cloud;
        let password = c.password.clone().or_else(|| {
            c.password_env.as_ref().and_then(|var| std::env::var(var).ok())
        });
        let mut missing = Vec::new();
        let mut need = |key: &str, v: &Option<String>| {
            if v.as_deref().map_or(true, str::is_empty) {
                missing.push(format!("cloud.{key}"));
            }
        };
        need("auth_url", &c.auth_url);
        need("username", &c.username);
        need("password", &password);
        need("project_name", &c.project_name);
        if !missing.is_empty() {
            return Err(ConfigError::Missing(missing));
        }
        Ok(CredentialValues {
            auth_url: c.auth_url.clone().unwrap_or_default(),
            username: c.username.clone().unwrap_or_default(),
            password: password.unwrap_or_default(),
            project_name: c.project_name.clone().unwrap_or_default(),
            domain: c.domain.clone(),
        })
    }
}
