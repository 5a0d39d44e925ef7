//! The running twin: polls the cloud, keeps the scene current and relays
//! commands back.
//!
//! [`cloud`] talks to Keystone, Nova and the ePDUs. The [`reconciler`] turns
//! successive polls into scenes and events, [`driver`] runs it on its own
//! thread and [`hub`] holds what it publishes for the HTTP [`gateway`].
//! [`scenario`] replays scripted runs against the bundled mock.

pub mod clock;
pub mod cloud;
pub mod config;
pub mod driver;
pub mod events;
pub mod gateway;
pub mod hub;
pub mod reconciler;
pub mod runtime;
pub mod scenario;
pub mod transport;

pub use clock::{Clock, ManualClock, SystemClock};
pub use cloud::{CloudClient, CloudError, CloudSession, Credentials};
pub use config::{ConfigError, TwinConfig};
pub use driver::{Driver, ServiceHandle, TickMode};
pub use events::{RetireOutcome, StreamEvent, TwinEvent};
pub use hub::{Hub, PublishedScene};
pub use reconciler::{Command, CommandKind, Reconciler, ReconcilerPolicy, Rejection, TickReport};
pub use scenario::{replay, ReplayOutput, Scenario, ScenarioError};
