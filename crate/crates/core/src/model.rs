//! Domain types mirrored from the cloud.
//!
//! Every value here is immutable once built; the reconciler replaces whole
//! snapshots rather than editing them in place.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::ids::{FlavourId, HypervisorId, InstanceId, ProjectId, SubjectId};

/// Machine size of an instance: VCPUs, memory and disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlavourSpec {
    pub id: FlavourId,
    pub name: String,
    pub vcpus: u32,
    pub ram_mb: u64,
    pub disk_gb: u64,
}

const DEFAULT_FLAVOURS: &str = include_str!("../fixtures/default_flavours.json");

impl FlavourSpec {
    /// The five flavours a stock OpenStack installation ships with.
    pub fn openstack_defaults() -> Vec<FlavourSpec> {
        serde_json::from_str(DEFAULT_FLAVOURS).expect("bundled flavour fixture is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HostState {
    Up,
    Down,
    Transitioning,
}

/// A physical compute node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypervisor {
    pub id: HypervisorId,
    pub hostname: String,
    pub vcpus_total: u32,
    pub state: HostState,
    /// Last ePDU reading for the host, if metering is mapped and available.
    pub power_watts: Option<f64>,
}

/// Instance lifecycle, normalised from Nova's much larger status vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InstanceStatus {
    Active,
    Shutoff,
    Suspended,
    Building,
    Migrating,
    Error,
}

impl InstanceStatus {
    /// Nova status string to model status.
    ///
    /// Unknown statuses collapse to `Error`; the second element is `false` in
    /// that case so callers can log the raw value.
    pub fn from_nova(raw: &str) -> (Self, bool) {
        match raw.to_ascii_uppercase().as_str() {
            "ACTIVE" => (Self::Active, true),
            "SHUTOFF" => (Self::Shutoff, true),
            "SUSPENDED" => (Self::Suspended, true),
            "BUILD" | "BUILDING" => (Self::Building, true),
            "MIGRATING" => (Self::Migrating, true),
            "ERROR" => (Self::Error, true),
            _ => (Self::Error, false),
        }
    }

    pub fn as_nova(self) -> &'static str {
        match self {
            Self::Active => "ACTIVE",
            Self::Shutoff => "SHUTOFF",
            Self::Suspended => "SUSPENDED",
            Self::Building => "BUILD",
            Self::Migrating => "MIGRATING",
            Self::Error => "ERROR",
        }
    }

    /// Powered-down instances render semi-transparent.
    pub fn is_powered_down(self) -> bool {
        matches!(self, Self::Shutoff | Self::Suspended)
    }

    pub fn is_running(self) -> bool {
        matches!(self, Self::Active | Self::Migrating)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmInstance {
    pub id: InstanceId,
    pub name: String,
    pub flavour_id: FlavourId,
    pub project_id: ProjectId,
    pub hypervisor_id: Option<HypervisorId>,
    pub status: InstanceStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub id: ProjectId,
    pub name: String,
}

/// Everything the twin knows about the cloud at one poll instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudState {
    pub poll_seq: u64,
    #[serde(with = "crate::timefmt")]
    pub observed_at: DateTime<Utc>,
    pub hypervisors: Vec<Hypervisor>,
    pub instances: Vec<VmInstance>,
    pub flavours: Vec<FlavourSpec>,
    pub projects: Vec<Project>,
}

impl CloudState {
    pub fn empty(poll_seq: u64, observed_at: DateTime<Utc>) -> Self {
        Self {
            poll_seq,
            observed_at,
            hypervisors: Vec::new(),
            instances: Vec::new(),
            flavours: Vec::new(),
            projects: Vec::new(),
        }
    }

    /// Sorts every collection by id so equal states serialise identically.
    pub fn canonicalise(&mut self) {
        self.hypervisors.sort_by(|a, b| a.id.cmp(&b.id));
        self.instances.sort_by(|a, b| a.id.cmp(&b.id));
        self.flavours.sort_by(|a, b| a.id.cmp(&b.id));
        self.projects.sort_by(|a, b| a.id.cmp(&b.id));
    }

    pub fn canonical(mut self) -> Self {
        self.canonicalise();
        self
    }

    pub fn to_canonical_json(&self) -> String {
        crate::canonical::to_string(&self.clone().canonical()).expect("CloudState serialises")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn hypervisor(&self, id: &HypervisorId) -> Option<&Hypervisor> {
        self.hypervisors.iter().find(|h| &h.id == id)
    }

    pub fn instance(&self, id: &InstanceId) -> Option<&VmInstance> {
        self.instances.iter().find(|i| &i.id == id)
    }

    pub fn flavour(&self, id: &FlavourId) -> Option<&FlavourSpec> {
        self.flavours.iter().find(|f| &f.id == id)
    }

    pub fn hypervisor_by_hostname(&self, hostname: &str) -> Option<&Hypervisor> {
        self.hypervisors.iter().find(|h| h.hostname == hostname)
    }

    /// Instances on `host` that are currently running.
    pub fn running_on(&self, host: &HypervisorId) -> usize {
        self.instances
            .iter()
            .filter(|i| i.hypervisor_id.as_ref() == Some(host) && i.status.is_running())
            .count()
    }
}

/// One ePDU power reading attributed to a hypervisor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReading {
    pub hypervisor_id: HypervisorId,
    pub watts: f64,
    #[serde(with = "crate::timefmt")]
    pub read_at: DateTime<Utc>,
}

/// What an in-flight command is trying to achieve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpKind {
    VmStart,
    VmStop,
    VmMigrate { target_host: HypervisorId },
    HostOn,
    HostOff,
}

impl OpKind {
    pub fn targets_host(&self) -> bool {
        matches!(self, Self::HostOn | Self::HostOff)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::VmStart => "vm_start",
            Self::VmStop => "vm_stop",
            Self::VmMigrate { .. } => "vm_migrate",
            Self::HostOn => "host_on",
            Self::HostOff => "host_off",
        }
    }
}

/// A command the cloud accepted but whose effect has not been observed yet.
/// While it exists its subject blinks in the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingOperation {
    pub op_id: String,
    pub subject_id: SubjectId,
    #[serde(flatten)]
    pub kind: OpKind,
    #[serde(with = "crate::timefmt")]
    pub issued_at: DateTime<Utc>,
    pub issued_seq: u64,
    #[serde(with = "crate::timefmt")]
    pub deadline: DateTime<Utc>,
}

pub mod fixtures {
    //! Bundled sample cluster: two 32-VCPU hosts, three instances, the five
    //! default flavours and two projects.

    use super::CloudState;

    pub const F1_JSON: &str = include_str!("../fixtures/f1.json");

    pub fn f1() -> CloudState {
        CloudState::from_json(F1_JSON).expect("bundled F1 fixture is valid")
    }
}
