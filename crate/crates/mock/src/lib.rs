//! A small, deterministic stand-in for the parts of OpenStack (Keystone and
//! Nova) and the rack ePDUs that the twin talks to.
//!
//! Time never moves on its own: every request carries the instant it is
//! handled at, and in-flight transitions complete when that instant passes
//! their deadline. The same [`MockWorld`] backs in-process tests and the
//! standalone HTTP server in [`server`].

mod api;
pub mod config;
pub mod server;
pub mod trace;
mod world;

pub use config::{
    Endpoint, FaultBehaviour, FaultRule, MeteringFixture, MockConfig, MockCredentials, OutletFixture,
};
pub use world::{CompletedTransition, MockError, MockReply, MockWorld, TransitionKind};

/// Host used in URLs when the mock is embedded in-process.
pub const IN_PROCESS_BASE: &str = "http://mock-cloud.local";

pub const F1_METERING_JSON: &str = include_str!("../fixtures/f1-metering.json");

/// World seeded with the bundled two-host sample cluster.
pub fn f1_world(config: MockConfig) -> MockWorld {
    let metering: MeteringFixture =
        serde_json::from_str(F1_METERING_JSON).expect("bundled metering fixture is valid");
    let state = twin_core::model::fixtures::f1();
    let start = state.observed_at;
    MockWorld::new(config, state, metering, start).expect("bundled fixture is valid")
}
