//! Wiring a configured service together.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use twin_core::LayoutConfig;
use twin_mock::{MockConfig, MockWorld, IN_PROCESS_BASE};

use crate::cloud::{
    CloudClient, CloudSession, Credentials, HostPower, HostPowerDriver, MeteringConfig, MeteringSource,
    RetryPolicy,
};
use crate::clock::Clock;
use crate::config::{CloudMode, ConfigError, PowerDriverKind, TwinConfig};
use crate::gateway::GatewayConfig;
use crate::reconciler::{Reconciler, ReconcilerPolicy};
use crate::transport::{HttpTransport, InProcessTransport, Transport};

fn secs(v: f64) -> Duration {
    Duration::from_secs_f64(v)
}

/// Everything needed to start the service.
pub struct Runtime {
    pub reconciler: Reconciler,
    /// The embedded cloud, in mock mode.
    pub world: Option<Arc<Mutex<MockWorld>>>,
    pub gateway: GatewayConfig,
    pub retention: usize,
}

impl TwinConfig {
    pub fn policy(&self) -> ReconcilerPolicy {
        ReconcilerPolicy {
            poll_interval: secs(self.poll.interval_s),
            metering_every: self.poll.metering_every,
            stale_after: self.poll.stale_after,
            power_timeout: secs(self.poll.power_timeout_s),
            migrate_timeout: secs(self.poll.migrate_timeout_s),
        }
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            attempts: self.poll.retry_attempts,
            base_delay: Duration::from_millis(self.poll.retry_base_ms),
            max_delay: secs(self.poll.interval_s),
        }
    }

    pub fn gateway_config(&self) -> GatewayConfig {
        GatewayConfig { heartbeat: secs(self.gateway.heartbeat_s) }
    }

    pub fn is_mock(&self) -> bool {
        self.cloud.mode == CloudMode::Mock
    }
}

/// Credentials the embedded mock accepts.
pub fn mock_credentials(config: &MockConfig) -> Credentials {
    let c = &config.credentials;
    Credentials::new(
        &format!("{IN_PROCESS_BASE}/identity/v3"),
        c.username.clone(),
        c.password.clone(),
        c.project_name.clone(),
        c.domain.clone(),
    )
    .expect("in-process base is absolute")
}

fn metering_config(config: &TwinConfig, world: Option<&MockWorld>) -> MeteringConfig {
    let m = &config.metering;
    let source = if let Some(url) = &m.url {
        Some(MeteringSource::Http(url.clone()))
    } else if let Some(file) = &m.file {
        Some(MeteringSource::File(file.clone()))
    } else if m.from_catalog || world.is_some() {
        Some(MeteringSource::Catalog)
    } else {
        None
    };
    let mut outlets = m.outlets.clone();
    // the mock knows which host each outlet feeds
    if let (true, Some(w)) = (outlets.is_empty(), world) {
        for o in &w.metering().outlets {
            if let Some(h) = &o.hypervisor_id {
                outlets.insert(o.name.clone(), h.clone());
            }
        }
    }
    MeteringConfig { source, outlets }
}

fn host_power(config: &TwinConfig, metering: &MeteringConfig) -> HostPower {
    let driver = match config.host_power.driver {
        PowerDriverKind::Mock => HostPowerDriver::Mock,
        PowerDriverKind::Epdu => HostPowerDriver::Epdu {
            base_url: config.host_power.epdu_url.clone().unwrap_or_default(),
            outlets: metering.outlets.iter().map(|(o, h)| (h.clone(), o.clone())).collect(),
        },
    };
    HostPower { driver, force_host_off: config.host_power.force_host_off }
}

/// Builds a reconciler over `transport`.
pub fn reconciler_with(
    config: &TwinConfig,
    transport: impl Transport + 'static,
    clock: Arc<dyn Clock>,
    creds: Credentials,
    world: Option<&MockWorld>,
) -> Reconciler {
    let mut client = CloudClient::new(transport, clock);
    client.paths = config.cloud.paths.clone();
    client.overrides = config.cloud.endpoints.clone();
    client.retry = config.retry();
    let metering = metering_config(config, world);
    let power = host_power(config, &metering);
    Reconciler::new(
        CloudSession::new(client, creds),
        power,
        metering,
        LayoutConfig { energy: config.energy },
        config.policy(),
    )
}

/// Assembles the service. `force_mock` has the same effect as
/// `cloud.mode = "mock"`.
pub fn assemble(
    config: &TwinConfig,
    force_mock: bool,
    clock: Arc<dyn Clock>,
    start: DateTime<Utc>,
) -> Result<Runtime, ConfigError> {
    let (reconciler, world) = if force_mock || config.is_mock() {
        let world = MockWorld::from_config(config.mock.clone(), start)
            .map_err(|e| ConfigError::Invalid(format!("mock: {e}")))?;
        let creds = mock_credentials(&config.mock);
        let world = Arc::new(Mutex::new(world));
        let transport = InProcessTransport::new(world.clone(), clock.clone());
        let guard = world.lock().unwrap();
        let r = reconciler_with(config, transport, clock, creds, Some(&guard));
        drop(guard);
        (r, Some(world))
    } else {
        let v = config.credentials()?;
        let creds = Credentials::new(&v.auth_url, v.username, v.password, v.project_name, v.domain)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let transport = HttpTransport::new(secs(config.cloud.request_timeout_s));
        (reconciler_with(config, transport, clock, creds, None), None)
    };
    Ok(Runtime {
        reconciler,
        world,
        gateway: config.gateway_config(),
        retention: config.gateway.retention,
    })
}
