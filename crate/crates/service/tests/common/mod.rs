#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use twin_core::InstanceId;
use twin_mock::{MockConfig, MockWorld};
use twin_service::cloud::{CloudClient, CloudSession, HostPower, MeteringConfig, MeteringSource};
use twin_service::reconciler::{Reconciler, ReconcilerPolicy};
use twin_service::runtime::mock_credentials;
use twin_service::transport::InProcessTransport;
use twin_service::{Clock, Command, CommandKind, ManualClock};

#[allow(unused_imports)]
pub use twin_testkit::trace::{BATCH_WORKER, DB_PRIMARY, WEB_FRONTEND};

/// The sample cluster behind an in-process mock, on a virtual clock.
pub struct Rig {
    pub clock: ManualClock,
    pub world: Arc<Mutex<MockWorld>>,
    pub mock: MockConfig,
}

impl Rig {
    pub fn new(mock: MockConfig) -> Self {
        let world = twin_mock::f1_world(mock.clone());
        let clock = ManualClock::new(world.now());
        Self { clock, world: Arc::new(Mutex::new(world)), mock }
    }

    pub fn f1() -> Self {
        Self::new(MockConfig::default())
    }

    pub fn shared_clock(&self) -> Arc<dyn Clock> {
        Arc::new(self.clock.clone())
    }

    pub fn client(&self) -> CloudClient {
        CloudClient::new(InProcessTransport::new(self.world.clone(), self.shared_clock()), self.shared_clock())
    }

    pub fn session(&self) -> CloudSession {
        CloudSession::new(self.client(), mock_credentials(&self.mock))
    }

    pub fn metering(&self) -> MeteringConfig {
        let mut outlets = std::collections::BTreeMap::new();
        for o in &self.world.lock().unwrap().metering().outlets {
            if let Some(h) = &o.hypervisor_id {
                outlets.insert(o.name.clone(), h.clone());
            }
        }
        MeteringConfig { source: Some(MeteringSource::Catalog), outlets }
    }

    pub fn reconciler(&self, policy: ReconcilerPolicy) -> Reconciler {
        Reconciler::new(self.session(), HostPower::default(), self.metering(), Default::default(), policy)
    }

    pub fn advance(&self, seconds: f64) {
        self.clock.advance(chrono::Duration::milliseconds((seconds * 1000.0).round() as i64));
    }

    pub fn instance_status(&self, id: &str) -> twin_core::InstanceStatus {
        let mut w = self.world.lock().unwrap();
        w.advance_to(self.clock.now());
        w.dump_state(0).instance(&InstanceId::new(id)).unwrap().status
    }
}

pub fn cmd(kind: CommandKind, subject: &str) -> Command {
    Command { kind, subject: subject.into(), target: None }
}

pub fn migrate(subject: &str, target: &str) -> Command {
    Command { kind: CommandKind::Migrate, subject: subject.into(), target: Some(target.into()) }
}
