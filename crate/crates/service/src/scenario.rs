//! Scripted runs against the embedded mock under a virtual clock.
//!
//! A scenario is a JSON document:
//!
//! ```json
//! { "name": "stop one vm",
//!   "settings": { "poll_interval_s": 1.0, "mock": { "transition_delay_power": 2.0 } },
//!   "steps": [ { "at": 0.0, "action": { "type": "command", "kind": "stop",
//!                                       "subject": "3f2a6c1e-8d4b-4e0a-9c57-1b2e3d4f5a61" } } ] }
//! ```
//!
//! The reconciler ticks at t = 0 and then every poll interval. Steps run
//! after any tick scheduled at the same instant. After the last step the run
//! continues for `settle_s` so in-flight operations can finish.

use std::path::Path;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use twin_core::{timefmt, CloudState, InstanceId, VmInstance};
use twin_mock::{FaultRule, MockConfig, MockWorld};

use crate::clock::{Clock, ManualClock};
use crate::config::TwinConfig;
use crate::driver::{apply_command, publish_tick};
use crate::events::StreamEvent;
use crate::hub::{Hub, PublishedScene, DEFAULT_RETENTION};
use crate::reconciler::{Command, Reconciler, TickReport};
use crate::runtime::{mock_credentials, reconciler_with};
use crate::transport::InProcessTransport;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {0}")]
    Io(String),
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("step {index} failed: {message}")]
    Step { index: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySettings {
    pub poll_interval_s: f64,
    pub metering_every: u32,
    pub stale_after: u32,
    pub power_timeout_s: f64,
    pub migrate_timeout_s: f64,
    /// Extra simulated time after the last step.
    pub settle_s: f64,
    pub mock: MockConfig,
}

impl Default for ReplaySettings {
    fn default() -> Self {
        Self {
            poll_interval_s: 1.0,
            metering_every: 5,
            stale_after: 3,
            power_timeout_s: 60.0,
            migrate_timeout_s: 300.0,
            settle_s: 10.0,
            mock: MockConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Command(Command),
    Fault(FaultRule),
    ClearFaults,
    /// Jump the clock forward without polling in between.
    Advance { seconds: f64 },
    CreateInstance { instance: VmInstance },
    DeleteInstance { instance_id: InstanceId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    /// Seconds since the start of the run.
    pub at: f64,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub settings: ReplaySettings,
    #[serde(default)]
    pub steps: Vec<Step>,
}

fn ms(seconds: f64) -> i64 {
    (seconds * 1000.0).round() as i64
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.check()?;
        Ok(s)
    }

    /// Loads a scenario file. Relative fixture paths are taken relative to
    /// the scenario's directory.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        let mut s = Self::parse(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [&mut s.settings.mock.fixture, &mut s.settings.mock.metering_fixture].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(s)
    }

    fn check(&self) -> Result<(), ScenarioError> {
        let st = &self.settings;
        for (name, v) in [
            ("poll_interval_s", st.poll_interval_s),
            ("power_timeout_s", st.power_timeout_s),
            ("migrate_timeout_s", st.migrate_timeout_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ScenarioError::Invalid(format!("settings.{name} must be positive")));
            }
        }
        if !(st.settle_s >= 0.0 && st.settle_s.is_finite()) {
            return Err(ScenarioError::Invalid("settings.settle_s must be >= 0".into()));
        }
        if st.metering_every == 0 || st.stale_after == 0 {
            return Err(ScenarioError::Invalid("settings.metering_every and settings.stale_after must be >= 1".into()));
        }
        st.mock.check().map_err(|e| ScenarioError::Invalid(format!("settings.mock: {e}")))?;
        let mut last = 0.0;
        for (i, step) in self.steps.iter().enumerate() {
            if !(step.at >= 0.0 && step.at.is_finite()) {
                return Err(ScenarioError::Invalid(format!("step {i}: at must be a non-negative number")));
            }
            if step.at < last {
                return Err(ScenarioError::Invalid(format!(
                    "step {i}: steps must be ordered by at ({} comes after {last})",
                    step.at
                )));
            }
            if let Action::Advance { seconds } = step.action {
                if !(seconds >= 0.0 && seconds.is_finite()) {
                    return Err(ScenarioError::Invalid(format!("step {i}: advance must be >= 0")));
                }
            }
            last = step.at;
        }
        Ok(())
    }

    fn twin_config(&self) -> TwinConfig {
        let st = &self.settings;
        let mut c = TwinConfig::default();
        c.poll.interval_s = st.poll_interval_s;
        c.poll.metering_every = st.metering_every;
        c.poll.stale_after = st.stale_after;
        c.poll.power_timeout_s = st.power_timeout_s;
        c.poll.migrate_timeout_s = st.migrate_timeout_s;
        c.mock = st.mock.clone();
        c
    }
}

/// One line of the transcript.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum TranscriptEntry {
    Event(StreamEvent),
    Rejected(CommandRejected),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommandRejected {
    #[serde(rename = "type")]
    pub kind: &'static str,
    #[serde(with = "timefmt")]
    pub at: DateTime<Utc>,
    pub command: Command,
    pub error: &'static str,
    pub message: String,
}

/// What one tick of a replay produced.
#[derive(Debug, Clone)]
pub struct ReplayTick {
    /// Milliseconds since the start of the run.
    pub at_ms: i64,
    pub report: TickReport,
    /// The scene as published after this tick; stale ones are kept.
    pub scene: Option<Arc<PublishedScene>>,
    pub events: Vec<Arc<StreamEvent>>,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayOutput {
    pub entries: Vec<TranscriptEntry>,
    pub ticks: Vec<ReplayTick>,
    /// Mock state at the end of the run.
    pub final_state: Option<CloudState>,
}

impl ReplayOutput {
    /// One compact JSON object per line, empty when nothing happened.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&twin_core::canonical::to_compact(e).expect("transcript serialises"));
            out.push('\n');
        }
        out
    }
}

struct Run {
    clock: ManualClock,
    start: DateTime<Utc>,
    world: Arc<Mutex<MockWorld>>,
    reconciler: Reconciler,
    hub: Hub,
    out: ReplayOutput,
}

impl Run {
    fn set(&self, at_ms: i64) {
        self.clock.set(self.start + chrono::Duration::milliseconds(at_ms));
    }

    fn tick(&mut self, at_ms: i64) {
        self.set(at_ms);
        let report = self.reconciler.tick();
        let head_before = self.hub.head();
        publish_tick(&self.hub, &self.reconciler, &report);
        let events = self.hub.subscribe(Some(head_before)).backlog;
        self.out.entries.extend(events.iter().map(|e| TranscriptEntry::Event((**e).clone())));
        let scene = self.hub.scene();
        self.out.ticks.push(ReplayTick { at_ms, report, scene, events });
    }
}

/// Runs `scenario` to completion. The same scenario always yields the same
/// output.
pub fn replay(scenario: &Scenario) -> Result<ReplayOutput, ScenarioError> {
    scenario.check()?;
    let mock = scenario.settings.mock.clone();
    let seed = match &mock.fixture {
        Some(p) => {
            let raw = std::fs::read_to_string(p)
                .map_err(|e| ScenarioError::Io(format!("{}: {e}", p.display())))?;
            CloudState::from_json(&raw).map_err(|e| ScenarioError::Parse(format!("{}: {e}", p.display())))?
        }
        None => twin_core::model::fixtures::f1(),
    };
    let start = seed.observed_at;
    let world = MockWorld::from_config(mock.clone(), start).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let world = Arc::new(Mutex::new(world));
    let clock = ManualClock::new(start);
    let shared: Arc<dyn Clock> = Arc::new(clock.clone());
    let transport = InProcessTransport::new(world.clone(), shared.clone());
    let config = scenario.twin_config();
    let reconciler = {
        let guard = world.lock().unwrap();
        reconciler_with(&config, transport, shared, mock_credentials(&mock), Some(&guard))
    };
    let mut run = Run {
        clock,
        start,
        world,
        reconciler,
        hub: Hub::new(DEFAULT_RETENTION),
        out: ReplayOutput::default(),
    };

    let poll = ms(scenario.settings.poll_interval_s).max(1);
    let mut now = 0i64;
    let mut next_tick = 0i64;
    for (index, step) in scenario.steps.iter().enumerate() {
        let at = ms(step.at).max(now);
        while next_tick <= at {
            run.tick(next_tick);
            next_tick += poll;
        }
        now = at;
        run.set(now);
        let fail = |message: String| ScenarioError::Step { index, message };
        match &step.action {
            Action::Command(cmd) => {
                if let Err(r) = apply_command(&run.hub, &mut run.reconciler, cmd) {
                    run.out.entries.push(TranscriptEntry::Rejected(CommandRejected {
                        kind: "command_rejected",
                        at: run.clock.now(),
                        command: cmd.clone(),
                        error: r.code(),
                        message: r.to_string(),
                    }));
                } else {
                    let head = run.hub.head();
                    let ev = run.hub.subscribe(Some(head - 1)).backlog;
                    run.out.entries.extend(ev.iter().map(|e| TranscriptEntry::Event((**e).clone())));
                }
            }
            Action::Fault(rule) => run.world.lock().unwrap().push_fault(rule.clone()),
            Action::ClearFaults => run.world.lock().unwrap().clear_faults(),
            Action::Advance { seconds } => {
                now += ms(*seconds);
                run.set(now);
                while next_tick <= now {
                    next_tick += poll;
                }
            }
            Action::CreateInstance { instance } => {
                run.world.lock().unwrap().create_instance(instance.clone()).map_err(|e| fail(e.to_string()))?
            }
            Action::DeleteInstance { instance_id } => {
                run.world.lock().unwrap().delete_instance(instance_id).map_err(|e| fail(e.to_string()))?;
            }
        }
    }
    let end = now + ms(scenario.settings.settle_s);
    while next_tick <= end {
        run.tick(next_tick);
        next_tick += poll;
    }
    let seq = run.reconciler.poll_seq();
    run.out.final_state = Some(run.world.lock().unwrap().dump_state(seq));
    Ok(run.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unordered_steps_are_rejected() {
        let text = r#"{ "name": "x", "steps": [
            { "at": 2.0, "action": { "type": "clear_faults" } },
            { "at": 1.0, "action": { "type": "clear_faults" } } ] }"#;
        assert!(matches!(Scenario::parse(text), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(matches!(
            Scenario::parse(r#"{ "name": "x", "stepz": [] }"#),
            Err(ScenarioError::Parse(_))
        ));
        assert!(matches!(
            Scenario::parse(r#"{ "name": "x", "steps": [ { "at": 0, "action": { "type": "reboot" } } ] }"#),
            Err(ScenarioError::Parse(_))
        ));
    }

    #[test]
    fn empty_scenario_has_empty_transcript() {
        let s = Scenario::parse(r#"{ "name": "empty" }"#).unwrap();
        let out = replay(&s).unwrap();
        assert_eq!(out.transcript(), "");
        // t = 0 plus ten settle ticks
        assert_eq!(out.ticks.len(), 11);
        assert!(out.ticks.iter().all(|t| t.scene.is_some()));
    }
}
