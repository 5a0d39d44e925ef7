//! Core of the cloud digital twin.
//!
//! The twin mirrors an OpenStack-managed cluster as a scene: every hypervisor
//! is a plate divided into one grid cell per VCPU, and every VM instance is a
//! box standing on the plate of its host. This crate holds the domain model
//! ([`model`]), the snapshot diff that turns consecutive polls into events
//! ([`diff`]), and the pure layout engine that derives the scene
//! ([`layout`]).

pub mod canonical;
pub mod diff;
pub mod ids;
pub mod layout;
pub mod model;
pub mod timefmt;
pub mod validate;
pub mod wire;

pub use diff::{diff_states, CloudEvent, EventKind, EventValue, SequenceError};
pub use ids::{FlavourId, HypervisorId, InstanceId, ProjectId, SubjectId};
pub use layout::{
    build_scene, energy_shade, footprint, place_boxes, project_colour, BoxGeometry, EnergyRange,
    Footprint, LayoutConfig, LayoutError, PlateGeometry, SceneSnapshot,
};
pub use model::{
    CloudState, EnergyReading, FlavourSpec, HostState, Hypervisor, InstanceStatus, OpKind,
    PendingOperation, Project, VmInstance,
};
pub use validate::{validate, ValidationReport, Violation};
