//! ePDU power readings.
//!
//! The metering document is `{"outlets": [{"name": ..., "watts": ...}]}`,
//! served over HTTP or read from a file. Outlets are attributed to hosts by
//! the configured mapping; a host fed by several outlets reads their sum.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Deserialize;
use twin_core::wire::WireRequest;
use twin_core::{CloudState, EnergyReading, HypervisorId};

use super::{AuthToken, CloudClient, CloudError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MeteringSource {
    /// Absolute URL of the metering document.
    Http(String),
    File(PathBuf),
    /// `{metering}/metering`, using the token's `metering` catalog entry.
    Catalog,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MeteringConfig {
    pub source: Option<MeteringSource>,
    /// Outlet name to the hypervisor it feeds.
    pub outlets: BTreeMap<String, HypervisorId>,
}

#[derive(Deserialize)]
struct MeteringDoc {
    outlets: Vec<OutletDoc>,
}

#[derive(Deserialize)]
struct OutletDoc {
    name: String,
    watts: f64,
}

impl CloudClient {
    /// One reading per mapped host known in `state`, in host id order.
    pub fn fetch_metering(
        &self,
        config: &MeteringConfig,
        token: Option<&AuthToken>,
        state: &CloudState,
    ) -> Result<Vec<EnergyReading>, CloudError> {
        let raw = match &config.source {
            None => return Ok(Vec::new()),
            Some(MeteringSource::File(path)) => std::fs::read(path)
                .map_err(|e| CloudError::Transient(format!("metering file {}: {e}", path.display())))?,
            Some(MeteringSource::Http(url)) => self.get_metering(url.clone())?,
            Some(MeteringSource::Catalog) => {
                let base = token
                    .and_then(|t| t.endpoint("metering"))
                    .ok_or_else(|| CloudError::Config("no metering endpoint in catalog".into()))?;
                self.get_metering(format!("{}/metering", base.trim_end_matches('/')))?
            }
        };
        let doc: MeteringDoc = serde_json::from_slice(&raw)
            .map_err(|e| CloudError::Decode { what: "metering".into(), message: e.to_string() })?;

        let read_at = self.clock().now();
        let mut per_host: BTreeMap<HypervisorId, f64> = BTreeMap::new();
        for outlet in doc.outlets {
            let Some(host) = config.outlets.get(&outlet.name) else {
                tracing::debug!(outlet = %outlet.name, "unmapped outlet ignored");
                continue;
            };
            if state.hypervisor(host).is_none() {
                tracing::warn!(outlet = %outlet.name, hypervisor = %host, "outlet mapped to unknown hypervisor, reading dropped");
                continue;
            }
            if !(outlet.watts >= 0.0) || !outlet.watts.is_finite() {
                tracing::warn!(outlet = %outlet.name, watts = outlet.watts, "implausible reading dropped");
                continue;
            }
            *per_host.entry(host.clone()).or_default() += outlet.watts;
        }
        Ok(per_host
            .into_iter()
            .map(|(hypervisor_id, watts)| EnergyReading { hypervisor_id, watts, read_at })
            .collect())
    }

    fn get_metering(&self, url: String) -> Result<Vec<u8>, CloudError> {
        let req = WireRequest::new("GET", url).header("accept", "application/json");
        self.send_expect(&req, &[200], false).map(|r| r.body)
    }
}
