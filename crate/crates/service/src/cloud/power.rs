//! Switching physical hosts on and off.
//!
//! OpenStack itself has no host power API, so the twin goes around it: either
//! through the mock's power endpoint or by switching the ePDU outlet a host
//! is plugged into.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;
use twin_core::wire::WireRequest;
use twin_core::{CloudState, HostState, HypervisorId};

use super::{Accepted, AuthToken, CloudClient, CloudError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HostAction {
    PowerOn,
    PowerOff,
}

impl HostAction {
    fn verb(self) -> &'static str {
        match self {
            Self::PowerOn => "on",
            Self::PowerOff => "off",
        }
    }

    fn target_state(self) -> HostState {
        match self {
            Self::PowerOn => HostState::Up,
            Self::PowerOff => HostState::Down,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HostPowerDriver {
    /// `POST {power}/hypervisors/{id}` with the token, where `power` comes
    /// from the catalog or the `power` override.
    Mock,
    /// `POST {base_url}/outlets/{outlet}/power`, unauthenticated.
    Epdu { base_url: String, outlets: BTreeMap<HypervisorId, String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostPower {
    pub driver: HostPowerDriver,
    /// Allow powering off hosts that still run instances.
    pub force_host_off: bool,
}

impl Default for HostPower {
    fn default() -> Self {
        Self { driver: HostPowerDriver::Mock, force_host_off: false }
    }
}

impl HostPower {
    /// Checks the request against `state` and hands it to the driver.
    pub fn send(
        &self,
        client: &CloudClient,
        token: &AuthToken,
        state: &CloudState,
        host_id: &HypervisorId,
        action: HostAction,
    ) -> Result<Accepted, CloudError> {
        let host = state
            .hypervisor(host_id)
            .ok_or_else(|| CloudError::NotFound(format!("hypervisor {host_id}")))?;
        if host.state == action.target_state() {
            return Err(CloudError::Conflict(format!(
                "hypervisor {host_id} is already {:?}",
                host.state
            )));
        }
        let running = state.running_on(host_id);
        if action == HostAction::PowerOff && running > 0 && !self.force_host_off {
            return Err(CloudError::Policy(format!(
                "hypervisor {host_id} still runs {running} instance(s); set force_host_off to allow"
            )));
        }
        let req = match &self.driver {
            HostPowerDriver::Mock => {
                let base = client.power_base(token)?;
                WireRequest::new("POST", format!("{base}/hypervisors/{host_id}"))
                    .header("x-auth-token", token.token.clone())
                    .json_body(&json!({ "action": action.verb() }))
            }
            HostPowerDriver::Epdu { base_url, outlets } => {
                let outlet = outlets.get(host_id).ok_or_else(|| {
                    CloudError::Config(format!("no ePDU outlet mapped to hypervisor {host_id}"))
                })?;
                WireRequest::new(
                    "POST",
                    format!("{}/outlets/{outlet}/power", base_url.trim_end_matches('/')),
                )
                .json_body(&json!({ "state": action.verb() }))
            }
        };
        client.send_expect(&req, &[200, 202, 204], true).map(|_| Accepted)
    }
}
