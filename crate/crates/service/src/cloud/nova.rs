//! Decoding Keystone and Nova response bodies into model types.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;
use twin_core::wire::WireResponse;
use twin_core::{
    timefmt, CloudState, FlavourSpec, HostState, Hypervisor, HypervisorId, InstanceStatus, Project,
    VmInstance,
};

use super::{AuthToken, CloudError};

/// Nova has used both strings and integers for hypervisor ids.
#[derive(Deserialize)]
#[serde(untagged)]
enum LooseId {
    Str(String),
    Num(u64),
}

impl LooseId {
    fn into_string(self) -> String {
        match self {
            Self::Str(s) => s,
            Self::Num(n) => n.to_string(),
        }
    }
}

#[derive(Deserialize)]
struct TokenDoc {
    token: TokenBody,
}

#[derive(Deserialize)]
struct TokenBody {
    expires_at: String,
    #[serde(default)]
    catalog: Vec<CatalogEntry>,
}

#[derive(Deserialize)]
struct CatalogEntry {
    #[serde(rename = "type")]
    service_type: String,
    endpoints: Vec<CatalogEndpoint>,
}

#[derive(Deserialize)]
struct CatalogEndpoint {
    interface: String,
    url: String,
}

#[derive(Deserialize)]
struct ServersDoc {
    servers: Vec<ServerDoc>,
}

#[derive(Deserialize)]
struct ServerDoc {
    id: String,
    name: String,
    status: String,
    tenant_id: String,
    flavor: FlavorRef,
    #[serde(rename = "OS-EXT-SRV-ATTR:host", default)]
    host: Option<String>,
    #[serde(rename = "OS-EXT-SRV-ATTR:hypervisor_hostname", default)]
    hypervisor_hostname: Option<String>,
}

#[derive(Deserialize)]
struct FlavorRef {
    id: String,
}

#[derive(Deserialize)]
struct HypervisorsDoc {
    hypervisors: Vec<HypervisorDoc>,
}

#[derive(Deserialize)]
struct HypervisorDoc {
    id: LooseId,
    hypervisor_hostname: String,
    vcpus: u32,
    state: String,
    #[serde(default)]
    service: Option<ServiceRef>,
}

#[derive(Deserialize)]
struct ServiceRef {
    host: String,
}

#[derive(Deserialize)]
struct FlavorsDoc {
    flavors: Vec<FlavorDoc>,
}

#[derive(Deserialize)]
struct FlavorDoc {
    id: String,
    name: String,
    vcpus: u32,
    ram: u64,
    #[serde(default)]
    disk: u64,
}

#[derive(Deserialize)]
struct ProjectsDoc {
    projects: Vec<ProjectDoc>,
}

#[derive(Deserialize)]
struct ProjectDoc {
    id: String,
    name: String,
}

fn decode<T: DeserializeOwned>(what: &str, v: &Value) -> Result<T, CloudError> {
    T::deserialize(v).map_err(|e| CloudError::Decode { what: what.into(), message: e.to_string() })
}

pub(super) fn parse_token(resp: &WireResponse) -> Result<AuthToken, CloudError> {
    let token = resp
        .get_header("x-subject-token")
        .ok_or_else(|| CloudError::Decode {
            what: "token".into(),
            message: "missing X-Subject-Token header".into(),
        })?
        .to_owned();
    let doc: TokenDoc = serde_json::from_slice(&resp.body)
        .map_err(|e| CloudError::Decode { what: "token".into(), message: e.to_string() })?;
    let expires_at = DateTime::parse_from_rfc3339(&doc.token.expires_at)
        .map(|t| t.with_timezone(&Utc))
        .or_else(|_| timefmt::parse(&doc.token.expires_at))
        .map_err(|e| CloudError::Decode { what: "token expires_at".into(), message: e.to_string() })?;
    let mut service_catalog = BTreeMap::new();
    for entry in doc.token.catalog {
        if let Some(ep) = entry.endpoints.iter().find(|e| e.interface == "public") {
            service_catalog.insert(entry.service_type, ep.url.clone());
        }
    }
    Ok(AuthToken { token, expires_at, service_catalog })
}

fn host_state(raw: &str) -> HostState {
    match raw {
        "up" => HostState::Up,
        "down" => HostState::Down,
        _ => HostState::Transitioning,
    }
}

pub(super) fn assemble(
    servers: &Value,
    hypervisors: &Value,
    flavors: &Value,
    projects: &Value,
    poll_seq: u64,
    observed_at: DateTime<Utc>,
) -> Result<CloudState, CloudError> {
    let servers: ServersDoc = decode("servers", servers)?;
    let hypervisors: HypervisorsDoc = decode("hypervisors", hypervisors)?;
    let flavors: FlavorsDoc = decode("flavors", flavors)?;
    let projects: ProjectsDoc = decode("projects", projects)?;

    let mut state = CloudState::empty(poll_seq, observed_at);
    // servers name their host either by compute service host or by
    // hypervisor hostname; accept both
    let mut by_name: BTreeMap<String, HypervisorId> = BTreeMap::new();
    for h in hypervisors.hypervisors {
        let id = HypervisorId::new(h.id.into_string());
        let service_host = h.service.map(|s| s.host);
        by_name.insert(h.hypervisor_hostname.clone(), id.clone());
        if let Some(sh) = &service_host {
            by_name.insert(sh.clone(), id.clone());
        }
        state.hypervisors.push(Hypervisor {
            id,
            hostname: service_host.unwrap_or(h.hypervisor_hostname),
            vcpus_total: h.vcpus,
            state: host_state(&h.state),
            power_watts: None,
        });
    }
    for s in servers.servers {
        let (status, known) = InstanceStatus::from_nova(&s.status);
        if !known {
            tracing::warn!(instance = %s.id, status = %s.status, "unknown Nova status, treating as Error");
        }
        let hypervisor_id = s
            .host
            .iter()
            .chain(s.hypervisor_hostname.iter())
            .find_map(|n| by_name.get(n).cloned());
        state.instances.push(VmInstance {
            id: s.id.into(),
            name: s.name,
            flavour_id: s.flavor.id.into(),
            project_id: s.tenant_id.into(),
            hypervisor_id,
            status,
        });
    }
    for f in flavors.flavors {
        state.flavours.push(FlavourSpec {
            id: f.id.into(),
            name: f.name,
            vcpus: f.vcpus,
            ram_mb: f.ram,
            disk_gb: f.disk,
        });
    }
    for p in projects.projects {
        state.projects.push(Project { id: p.id.into(), name: p.name });
    }
    Ok(state)
}
