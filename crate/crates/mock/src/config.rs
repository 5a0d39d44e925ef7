use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twin_core::HypervisorId;

use crate::world::MockError;

/// Mock endpoints, as named in fault plans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Auth,
    Projects,
    Servers,
    Hypervisors,
    Flavors,
    /// Any server action.
    ServerAction,
    /// Only `os-migrateLive` server actions; checked before `ServerAction`.
    LiveMigrate,
    HostPower,
    Metering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultBehaviour {
    /// Answer with this status and an error body.
    Status(u16),
    /// Never answer.
    Timeout,
    /// Accept an action with 202 but never carry it out. Acts like
    /// `timeout` on read endpoints.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRule {
    pub endpoint: Endpoint,
    pub behaviour: FaultBehaviour,
    /// Matching requests left to sabotage; `None` never runs out.
    #[serde(default)]
    pub count: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockCredentials {
    pub username: String,
    pub password: String,
    pub project_name: String,
    pub domain: String,
}

impl Default for MockCredentials {
    fn default() -> Self {
        Self {
            username: "admin".into(),
            password: "secret".into(),
            project_name: "admin".into(),
            domain: "Default".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    /// Canonical CloudState JSON to seed from; the bundled sample when unset.
    pub fixture: Option<PathBuf>,
    /// Metering JSON with outlet readings.
    pub metering_fixture: Option<PathBuf>,
    /// Seconds for start/stop and host power changes to take effect.
    pub transition_delay_power: f64,
    pub transition_delay_migrate: f64,
    pub token_ttl: f64,
    pub faults: Vec<FaultRule>,
    pub credentials: MockCredentials,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            fixture: None,
            metering_fixture: None,
            transition_delay_power: 2.0,
            transition_delay_migrate: 3.0,
            token_ttl: 3600.0,
            faults: Vec::new(),
            credentials: MockCredentials::default(),
        }
    }
}

impl MockConfig {
    pub fn check(&self) -> Result<(), MockError> {
        if !(self.transition_delay_power >= 0.0) || !(self.transition_delay_migrate >= 0.0) {
            return Err(MockError::Config("transition delays must be >= 0".into()));
        }
        if !(self.token_ttl > 0.0) {
            return Err(MockError::Config("token_ttl must be > 0".into()));
        }
        Ok(())
    }
}

/// One outlet of an ePDU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutletFixture {
    pub name: String,
    pub watts: f64,
    /// Host plugged into this outlet. Only the mock uses this, to switch
    /// hosts through outlets and to read zero for hosts that are down.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypervisor_id: Option<HypervisorId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeteringFixture {
    pub outlets: Vec<OutletFixture>,
}

impl MeteringFixture {
    pub fn load(path: &Path) -> Result<Self, MockError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| MockError::Fixture(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| MockError::Fixture(format!("{}: {e}", path.display())))
    }
}
