use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use twin_core::wire::WireResponse;
use twin_core::{
    validate, CloudState, HostState, HypervisorId, InstanceId, InstanceStatus, ValidationReport,
    VmInstance,
};

use crate::config::{Endpoint, FaultBehaviour, FaultRule, MeteringFixture, MockConfig};

#[derive(Debug, Error)]
pub enum MockError {
    #[error("mock config: {0}")]
    Config(String),
    #[error("fixture: {0}")]
    Fixture(String),
    #[error("fixture state is invalid: {0}")]
    InvalidState(ValidationReport),
    #[error("instance {0} already exists")]
    Duplicate(InstanceId),
    #[error("unknown instance {0}")]
    UnknownInstance(InstanceId),
}

/// What the mock does with a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    Response(WireResponse),
    /// The request is swallowed; callers should treat it as a timeout.
    Timeout,
}

impl MockReply {
    pub fn response(&self) -> Option<&WireResponse> {
        match self {
            Self::Response(r) => Some(r),
            Self::Timeout => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransitionKind {
    PowerOff,
    PowerOn,
    LiveMigrate { target: HypervisorId },
    ColdMigrate { target: HypervisorId, resume: InstanceStatus },
    HostOff,
    HostOn,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Transition {
    pub kind: TransitionKind,
    pub due: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletedTransition {
    pub subject_id: String,
    #[serde(flatten)]
    pub kind: TransitionKind,
    #[serde(with = "twin_core::timefmt")]
    pub at: DateTime<Utc>,
}

pub(crate) fn seconds(s: f64) -> Duration {
    Duration::milliseconds((s * 1000.0).round() as i64)
}

/// The simulated cloud.
#[derive(Debug, Clone)]
pub struct MockWorld {
    pub(crate) config: MockConfig,
    pub(crate) now: DateTime<Utc>,
    pub(crate) state: CloudState,
    pub(crate) metering: MeteringFixture,
    /// Keyed by subject id; at most one per subject.
    pub(crate) transitions: BTreeMap<String, Transition>,
    pub(crate) tokens: BTreeMap<String, DateTime<Utc>>,
    pub(crate) tokens_issued: u64,
    pub(crate) faults: Vec<FaultRule>,
}

impl MockWorld {
    pub fn new(
        config: MockConfig,
        state: CloudState,
        metering: MeteringFixture,
        start: DateTime<Utc>,
    ) -> Result<Self, MockError> {
        config.check()?;
        let report = validate(&state);
        if !report.is_valid() {
            return Err(MockError::InvalidState(report));
        }
        let mut state = state.canonical();
        for h in &mut state.hypervisors {
            h.power_watts = None;
        }
        let faults = config.faults.clone();
        Ok(Self {
            config,
            now: start,
            state,
            metering,
            transitions: BTreeMap::new(),
            tokens: BTreeMap::new(),
            tokens_issued: 0,
            faults,
        })
    }

    /// Loads the fixtures named in `config`, falling back to the bundled
    /// sample cluster.
    pub fn from_config(config: MockConfig, start: DateTime<Utc>) -> Result<Self, MockError> {
        let state = match &config.fixture {
            Some(path) => load_state(path)?,
            None => twin_core::model::fixtures::f1(),
        };
        let metering = match &config.metering_fixture {
            Some(path) => MeteringFixture::load(path)?,
            None if config.fixture.is_none() => {
                serde_json::from_str(crate::F1_METERING_JSON).expect("bundled metering fixture")
            }
            None => MeteringFixture::default(),
        };
        Self::new(config, state, metering, start)
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.now
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    pub fn metering(&self) -> &MeteringFixture {
        &self.metering
    }

    /// Current entities as a snapshot; `power_watts` is left empty because
    /// inventory never carries power.
    pub fn dump_state(&self, poll_seq: u64) -> CloudState {
        let mut s = self.state.clone();
        s.poll_seq = poll_seq;
        s.observed_at = self.now;
        s
    }

    pub fn in_flight(&self) -> impl Iterator<Item = (&str, &TransitionKind, DateTime<Utc>)> {
        self.transitions.iter().map(|(k, t)| (k.as_str(), &t.kind, t.due))
    }

    pub fn advance_clock(&mut self, dt: Duration) -> Vec<CompletedTransition> {
        let target = self.now + dt.max(Duration::zero());
        self.advance_to(target)
    }

    /// Moves the clock forward to `now` (never backwards) and completes every
    /// transition whose deadline has been reached, earliest first.
    pub fn advance_to(&mut self, now: DateTime<Utc>) -> Vec<CompletedTransition> {
        if now > self.now {
            self.now = now;
        }
        let mut due: Vec<(DateTime<Utc>, String)> = self
            .transitions
            .iter()
            .filter(|(_, t)| t.due <= self.now)
            .map(|(k, t)| (t.due, k.clone()))
            .collect();
        due.sort();
        let mut done = Vec::with_capacity(due.len());
        for (at, subject) in due {
            let t = self.transitions.remove(&subject).expect("listed above");
            self.complete(&subject, &t.kind);
            done.push(CompletedTransition { subject_id: subject, kind: t.kind, at });
        }
        done
    }

    fn complete(&mut self, subject: &str, kind: &TransitionKind) {
        match kind {
            TransitionKind::PowerOff => self.set_status(subject, InstanceStatus::Shutoff),
            TransitionKind::PowerOn => self.set_status(subject, InstanceStatus::Active),
            TransitionKind::LiveMigrate { target } => {
                self.move_instance(subject, target, InstanceStatus::Active)
            }
            TransitionKind::ColdMigrate { target, resume } => {
                self.move_instance(subject, target, *resume)
            }
            TransitionKind::HostOff => {
                if let Some(h) = self.state.hypervisors.iter_mut().find(|h| h.id.as_str() == subject) {
                    h.state = HostState::Down;
                }
                for vm in &mut self.state.instances {
                    if vm.hypervisor_id.as_ref().map(|h| h.as_str()) == Some(subject)
                        && vm.status.is_running()
                    {
                        vm.status = InstanceStatus::Shutoff;
                    }
                }
            }
            TransitionKind::HostOn => {
                if let Some(h) = self.state.hypervisors.iter_mut().find(|h| h.id.as_str() == subject) {
                    h.state = HostState::Up;
                }
            }
        }
    }

    fn set_status(&mut self, id: &str, status: InstanceStatus) {
        if let Some(vm) = self.state.instances.iter_mut().find(|i| i.id.as_str() == id) {
            vm.status = status;
        }
    }

    fn move_instance(&mut self, id: &str, target: &HypervisorId, status: InstanceStatus) {
        if let Some(vm) = self.state.instances.iter_mut().find(|i| i.id.as_str() == id) {
            vm.hypervisor_id = Some(target.clone());
            vm.status = status;
        }
    }

    pub(crate) fn schedule(&mut self, subject: &str, kind: TransitionKind, delay: f64) {
        let due = self.now + seconds(delay);
        self.transitions.insert(subject.to_owned(), Transition { kind, due });
    }

    /// Adds an instance, as if created out of band.
    pub fn create_instance(&mut self, vm: VmInstance) -> Result<(), MockError> {
        if self.state.instance(&vm.id).is_some() {
            return Err(MockError::Duplicate(vm.id));
        }
        let mut next = self.state.clone();
        next.instances.push(vm);
        let report = validate(&next);
        if !report.is_valid() {
            return Err(MockError::InvalidState(report));
        }
        next.canonicalise();
        self.state = next;
        Ok(())
    }

    /// Removes an instance and anything in flight for it.
    pub fn delete_instance(&mut self, id: &InstanceId) -> Result<VmInstance, MockError> {
        let pos = self
            .state
            .instances
            .iter()
            .position(|i| &i.id == id)
            .ok_or_else(|| MockError::UnknownInstance(id.clone()))?;
        self.transitions.remove(id.as_str());
        Ok(self.state.instances.remove(pos))
    }

    pub fn push_fault(&mut self, rule: FaultRule) {
        self.faults.push(rule);
    }

    pub fn clear_faults(&mut self) {
        self.faults.clear();
    }

    /// Consumes the first live fault rule for one of `endpoints`, in order.
    pub(crate) fn take_fault(&mut self, endpoints: &[Endpoint]) -> Option<FaultBehaviour> {
        for ep in endpoints {
            if let Some(rule) = self
                .faults
                .iter_mut()
                .find(|r| r.endpoint == *ep && r.count != Some(0))
            {
                if let Some(n) = rule.count.as_mut() {
                    *n -= 1;
                }
                return Some(rule.behaviour);
            }
        }
        None
    }

    /// Watts currently reported per outlet: a host that is down draws nothing.
    pub fn outlet_watts(&self) -> Vec<(String, f64)> {
        self.metering
            .outlets
            .iter()
            .map(|o| {
                let down = o
                    .hypervisor_id
                    .as_ref()
                    .and_then(|h| self.state.hypervisor(h))
                    .is_some_and(|h| h.state == HostState::Down);
                (o.name.clone(), if down { 0.0 } else { o.watts })
            })
            .collect()
    }
}

fn load_state(path: &Path) -> Result<CloudState, MockError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| MockError::Fixture(format!("{}: {e}", path.display())))?;
    CloudState::from_json(&raw).map_err(|e| MockError::Fixture(format!("{}: {e}", path.display())))
}
