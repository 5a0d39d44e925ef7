//! The poll, diff and publish loop, and the command path into the cloud.
//!
//! A [`Reconciler`] owns all mutable twin state. [`Reconciler::tick`] polls
//! the cloud once and returns what changed; [`Reconciler::submit`] turns a
//! UI command into a cloud request and, once accepted, a pending operation.
//! Neither publishes anything; the driver does that with the results.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use twin_core::{
    build_scene, diff_states, CloudState, EnergyReading, HostState, HypervisorId, InstanceId,
    InstanceStatus, LayoutConfig, OpKind, PendingOperation, SceneSnapshot, SubjectId,
};

use crate::cloud::{CloudError, CloudSession, HostAction, HostPower, MeteringConfig, VmAction};
use crate::events::{RetireOutcome, TwinEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReconcilerPolicy {
    pub poll_interval: Duration,
    /// Metering is read on the first good tick and then every k-th one.
    pub metering_every: u32,
    /// Consecutive failed fetches before the scene is flagged stale.
    pub stale_after: u32,
    pub power_timeout: Duration,
    pub migrate_timeout: Duration,
}

impl Default for ReconcilerPolicy {
    fn default() -> Self {
        Self {
            poll_interval: Duration::from_secs(1),
            metering_every: 5,
            stale_after: 3,
            power_timeout: Duration::from_secs(60),
            migrate_timeout: Duration::from_secs(300),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Start,
    Stop,
    Migrate,
    PowerOn,
    PowerOff,
}

/// A request from the UI. `start`/`stop` on a hypervisor mean power on/off.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Command {
    pub kind: CommandKind,
    pub subject: SubjectId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<HypervisorId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("no snapshot yet; the service is warming up")]
    NotReady,
    #[error("unknown subject {0}")]
    UnknownSubject(SubjectId),
    #[error("{subject} is busy with {op_id}")]
    Busy { subject: SubjectId, op_id: String },
    #[error("nothing to do: {0}")]
    NoOp(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("malformed command: {0}")]
    Malformed(String),
    #[error("cloud: {0}")]
    Cloud(CloudError),
}

impl Rejection {
    /// Stable machine-readable reason.
    pub fn code(&self) -> &'static str {
        match self {
            Self::NotReady => "not_ready",
            Self::UnknownSubject(_) => "unknown_subject",
            Self::Busy { .. } => "busy",
            Self::NoOp(_) => "no_op",
            Self::InvalidTarget(_) => "invalid_target",
            Self::Malformed(_) => "malformed",
            Self::Cloud(CloudError::Conflict(_)) => "cloud_conflict",
            Self::Cloud(CloudError::NotFound(_)) => "cloud_not_found",
            Self::Cloud(CloudError::BadRequest(_)) => "cloud_bad_request",
            Self::Cloud(CloudError::Policy(_)) => "policy",
            Self::Cloud(_) => "cloud_unavailable",
        }
    }
}

/// Result of one poll.
#[derive(Debug, Clone, Default)]
pub struct TickReport {
    /// Poll sequence of the new snapshot; `None` when the fetch failed.
    pub poll_seq: Option<u64>,
    /// Cloud events first, then op lifecycle, then health changes.
    pub events: Vec<TwinEvent>,
    pub scene: Option<SceneSnapshot>,
    pub stale: bool,
    pub retired: Vec<(PendingOperation, RetireOutcome)>,
    pub timed_out: Vec<PendingOperation>,
}

pub struct Reconciler {
    session: CloudSession,
    host_power: HostPower,
    metering: MeteringConfig,
    layout: LayoutConfig,
    policy: ReconcilerPolicy,
    state: Option<CloudState>,
    readings: Vec<EnergyReading>,
    pending: BTreeMap<SubjectId, PendingOperation>,
    poll_seq: u64,
    ticks_since_metering: Option<u32>,
    failures: u32,
    stale: bool,
    ops_issued: u64,
}

fn chrono_of(d: Duration) -> chrono::Duration {
    chrono::Duration::from_std(d).unwrap_or(chrono::Duration::MAX)
}

enum Settled {
    Retired(RetireOutcome),
    TimedOut,
    Waiting,
}

fn settle(op: &PendingOperation, state: &CloudState, now: DateTime<Utc>) -> Settled {
    let reached = match &op.kind {
        OpKind::VmStart | OpKind::VmStop | OpKind::VmMigrate { .. } => {
            let Some(vm) = state.instance(&InstanceId::new(op.subject_id.as_str())) else {
                return Settled::Retired(RetireOutcome::SubjectVanished);
            };
            let done = match &op.kind {
                OpKind::VmStart => vm.status == InstanceStatus::Active,
                OpKind::VmStop => vm.status == InstanceStatus::Shutoff,
                OpKind::VmMigrate { target_host } => {
                    vm.hypervisor_id.as_ref() == Some(target_host) && vm.status != InstanceStatus::Migrating
                }
                _ => unreachable!(),
            };
            if !done && vm.status == InstanceStatus::Error {
                return Settled::Retired(RetireOutcome::Failed);
            }
            done
        }
        OpKind::HostOn | OpKind::HostOff => {
            let Some(h) = state.hypervisor(&HypervisorId::new(op.subject_id.as_str())) else {
                return Settled::Retired(RetireOutcome::SubjectVanished);
            };
            let goal = if op.kind == OpKind::HostOn { HostState::Up } else { HostState::Down };
            h.state == goal
        }
    };
    if reached {
        Settled::Retired(RetireOutcome::Completed)
    } else if now >= op.deadline {
        Settled::TimedOut
    } else {
        Settled::Waiting
    }
}

impl Reconciler {
    pub fn new(
        session: CloudSession,
        host_power: HostPower,
        metering: MeteringConfig,
        layout: LayoutConfig,
        policy: ReconcilerPolicy,
    ) -> Self {
        Self {
            session,
            host_power,
            metering,
            layout,
            policy,
            state: None,
            readings: Vec::new(),
            pending: BTreeMap::new(),
            poll_seq: 0,
            ticks_since_metering: None,
            failures: 0,
            stale: false,
            ops_issued: 0,
        }
    }

    pub fn policy(&self) -> &ReconcilerPolicy {
        &self.policy
    }

    pub fn state(&self) -> Option<&CloudState> {
        self.state.as_ref()
    }

    pub fn pending(&self) -> impl Iterator<Item = &PendingOperation> {
        self.pending.values()
    }

    pub fn is_stale(&self) -> bool {
        self.stale
    }

    pub fn poll_seq(&self) -> u64 {
        self.poll_seq
    }

    pub fn session(&self) -> &CloudSession {
        &self.session
    }

    fn now(&self) -> DateTime<Utc> {
        self.session.client().clock().now()
    }

    /// Polls once. On a failed fetch the previous state stands and only
    /// failure bookkeeping happens.
    pub fn tick(&mut self) -> TickReport {
        let started = Instant::now();
        let report = match self.session.fetch_inventory(self.poll_seq + 1) {
            Ok(state) => self.apply(state),
            Err(e) => self.fail(e.to_string()),
        };
        tracing::debug!(
            seq = self.poll_seq,
            ok = report.poll_seq.is_some(),
            duration_ms = started.elapsed().as_secs_f64() * 1e3,
            events = report.events.len(),
            pending = self.pending.len(),
            "tick"
        );
        report
    }

    fn fail(&mut self, error: String) -> TickReport {
        self.failures += 1;
        tracing::warn!(consecutive = self.failures, %error, "inventory fetch failed");
        let mut events = vec![TwinEvent::FetchFailed { consecutive: self.failures, error }];
        if self.failures >= self.policy.stale_after && !self.stale {
            self.stale = true;
            events.push(TwinEvent::StaleChanged { stale: true });
        }
        TickReport { events, stale: self.stale, ..TickReport::default() }
    }

    fn apply(&mut self, mut state: CloudState) -> TickReport {
        let now = self.now();
        let mut report = TickReport::default();
        let mut health = Vec::new();

        let due = match self.ticks_since_metering {
            None => true,
            Some(n) => n + 1 >= self.policy.metering_every.max(1),
        };
        if due {
            self.ticks_since_metering = Some(0);
            match self.session.fetch_metering(&self.metering, &state) {
                Ok(r) => self.readings = r,
                Err(e) => {
                    tracing::warn!(error = %e, "metering unavailable");
                    self.readings.clear();
                    health.push(TwinEvent::MeteringUnavailable { error: e.to_string() });
                }
            }
        } else {
            self.ticks_since_metering = self.ticks_since_metering.map(|n| n + 1);
        }
        self.readings.retain(|r| state.hypervisor(&r.hypervisor_id).is_some());
        for h in &mut state.hypervisors {
            h.power_watts = self.readings.iter().find(|r| r.hypervisor_id == h.id).map(|r| r.watts);
        }

        if let Some(prev) = &self.state {
            let cloud = diff_states(prev, &state).expect("poll_seq increases every tick");
            report.events.extend(cloud.into_iter().map(TwinEvent::Cloud));
        }

        let mut still_pending = BTreeMap::new();
        for (subject, op) in std::mem::take(&mut self.pending) {
            match settle(&op, &state, now) {
                Settled::Retired(outcome) => report.retired.push((op, outcome)),
                Settled::TimedOut => report.timed_out.push(op),
                Settled::Waiting => {
                    still_pending.insert(subject, op);
                }
            }
        }
        self.pending = still_pending;
        for (op, outcome) in &report.retired {
            report.events.push(TwinEvent::OpRetired { op: op.clone(), outcome: *outcome });
        }
        for op in &report.timed_out {
            let error = format!("{} on {} not observed by {}", op.kind.label(), op.subject_id, twin_core::timefmt::format(&op.deadline));
            tracing::warn!(op_id = %op.op_id, %error, "operation timed out");
            report.events.push(TwinEvent::OpTimedOut { op: op.clone(), error });
        }

        let pending: Vec<PendingOperation> = self.pending.values().cloned().collect();
        match build_scene(&state, &self.readings, &pending, &self.layout) {
            Ok(scene) => report.scene = Some(scene),
            Err(e) => {
                // fetch_inventory validates, so this means a broken layout config
                tracing::error!(error = %e, "scene build failed");
                let mut failed = self.fail(e.to_string());
                report.events.append(&mut failed.events);
                return TickReport { events: report.events, stale: self.stale, ..TickReport::default() };
            }
        }

        if self.stale {
            health.push(TwinEvent::StaleChanged { stale: false });
        }
        self.stale = false;
        self.failures = 0;
        report.events.extend(health);
        self.poll_seq = state.poll_seq;
        report.poll_seq = Some(state.poll_seq);
        report.stale = false;
        self.state = Some(state);
        report
    }

    /// The last good state laid out again with the current pending set.
    pub fn current_scene(&self) -> Option<SceneSnapshot> {
        let state = self.state.as_ref()?;
        let pending: Vec<PendingOperation> = self.pending.values().cloned().collect();
        build_scene(state, &self.readings, &pending, &self.layout).ok()
    }

    /// Sends `cmd` to the cloud and registers the resulting operation.
    ///
    /// Every local check runs before any request, so a rejected command
    /// never reaches the cloud unless the cloud itself is what refuses.
    pub fn submit(&mut self, cmd: &Command) -> Result<PendingOperation, Rejection> {
        let state = self.state.as_ref().ok_or(Rejection::NotReady)?;
        let vm = state.instance(&InstanceId::new(cmd.subject.as_str())).cloned();
        let host = state.hypervisor(&HypervisorId::new(cmd.subject.as_str())).cloned();
        if vm.is_none() && host.is_none() {
            return Err(Rejection::UnknownSubject(cmd.subject.clone()));
        }
        if let Some(op) = self.pending.get(&cmd.subject) {
            return Err(Rejection::Busy { subject: cmd.subject.clone(), op_id: op.op_id.clone() });
        }

        let kind = match (cmd.kind, &vm, &host) {
            (CommandKind::Start, Some(_), _) => OpKind::VmStart,
            (CommandKind::Stop, Some(_), _) => OpKind::VmStop,
            (CommandKind::Migrate, Some(vm), _) => {
                let target = cmd
                    .target
                    .as_ref()
                    .ok_or_else(|| Rejection::Malformed("migrate needs a target hypervisor".into()))?;
                if state.hypervisor(target).is_none() {
                    return Err(Rejection::InvalidTarget(format!("unknown hypervisor {target}")));
                }
                if vm.hypervisor_id.as_ref() == Some(target) {
                    return Err(Rejection::NoOp(format!("{} is already on {target}", vm.id)));
                }
                OpKind::VmMigrate { target_host: target.clone() }
            }
            (CommandKind::Start | CommandKind::PowerOn, None, Some(_)) => OpKind::HostOn,
            (CommandKind::Stop | CommandKind::PowerOff, None, Some(_)) => OpKind::HostOff,
            (CommandKind::Migrate, None, _) => {
                return Err(Rejection::Malformed("only instances can be migrated".into()))
            }
            (CommandKind::PowerOn | CommandKind::PowerOff, Some(_), _) => {
                return Err(Rejection::Malformed("power_on and power_off apply to hypervisors".into()))
            }
            (_, None, None) => unreachable!("checked above"),
        };

        let result = match &kind {
            OpKind::VmStart => self.session.send_vm_action(&cmd.subject.as_str().into(), &VmAction::Start),
            OpKind::VmStop => self.session.send_vm_action(&cmd.subject.as_str().into(), &VmAction::Stop),
            OpKind::VmMigrate { target_host } => {
                let hostname = state.hypervisor(target_host).expect("checked above").hostname.clone();
                self.session.send_vm_action(&cmd.subject.as_str().into(), &VmAction::MigrateTo(hostname))
            }
            OpKind::HostOn | OpKind::HostOff => {
                let action = if kind == OpKind::HostOn { HostAction::PowerOn } else { HostAction::PowerOff };
                let host_id = HypervisorId::new(cmd.subject.as_str());
                self.session.send_host_action(&self.host_power, state, &host_id, action)
            }
        };
        result.map_err(Rejection::Cloud)?;

        self.ops_issued += 1;
        let issued_at = self.now();
        let timeout = match kind {
            OpKind::VmMigrate { .. } => self.policy.migrate_timeout,
            _ => self.policy.power_timeout,
        };
        let op = PendingOperation {
            op_id: format!("op-{}", self.ops_issued),
            subject_id: cmd.subject.clone(),
            kind,
            issued_at,
            issued_seq: self.poll_seq,
            deadline: issued_at + chrono_of(timeout).max(chrono::Duration::milliseconds(1)),
        };
        tracing::info!(op_id = %op.op_id, subject = %op.subject_id, kind = op.kind.label(), "command accepted");
        self.pending.insert(cmd.subject.clone(), op.clone());
        Ok(op)
    }
}
