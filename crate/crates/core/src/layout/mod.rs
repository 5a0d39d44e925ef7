//! Scene layout: a pure function from cloud state to plates and boxes.
//!
//! Nothing here reads clocks or performs I/O, so equal inputs always yield
//! byte-identical canonical output.

mod geometry;
mod shelf;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::canonical::round_to;
use crate::ids::{FlavourId, HypervisorId, InstanceId, ProjectId};
use crate::model::{CloudState, EnergyReading, HostState, InstanceStatus, PendingOperation, Project};
use crate::validate::{validate, ValidationReport};

pub use geometry::{footprint, grid_dimensions, Footprint, MIN_BOX_HEIGHT, RAM_MB_PER_VOLUME_UNIT};
pub use shelf::{canonical_order, shelve, ShelfItem, ShelfLayout, ShelfPosition, TooWide};

/// Hue step between consecutive projects (the golden angle, in degrees).
pub const PROJECT_HUE_STEP: f64 = 137.508;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayoutError {
    #[error("cloud state is invalid: {0}")]
    InvalidState(ValidationReport),
    #[error(transparent)]
    Geometry(#[from] TooWide),
    #[error("unknown project {0}")]
    UnknownProject(ProjectId),
    #[error("energy range is empty: min {min} W must be below max {max} W")]
    EnergyRange { min: f64, max: f64 },
}

fn round2<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round_to(*v, 2))
}

fn round3<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round_to(*v, 3))
}

fn round4_opt<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_some(&round_to(*v, 4)),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateGeometry {
    pub hypervisor_id: HypervisorId,
    pub hostname: String,
    pub vcpus_total: u32,
    pub state: HostState,
    pub width_x: u32,
    pub depth_z: u32,
    pub power_watts: Option<f64>,
    /// 0 is the lightest red, 1 the darkest; absent without a reading.
    #[serde(serialize_with = "round4_opt")]
    pub energy_shade: Option<f64>,
    pub is_down: bool,
    pub is_blinking: bool,
    pub overcommitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxGeometry {
    pub instance_id: InstanceId,
    /// Plate this box stands on.
    pub plate_id: HypervisorId,
    pub name: String,
    pub flavour_id: FlavourId,
    pub project_id: ProjectId,
    pub status: InstanceStatus,
    pub width_x: u32,
    pub depth_z: u32,
    #[serde(serialize_with = "round2")]
    pub height_y: f64,
    pub pos_x: u32,
    pub pos_z: u32,
    #[serde(serialize_with = "round3")]
    pub colour_hue: f64,
    pub translucent: bool,
    pub is_blinking: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSnapshot {
    pub at_seq: u64,
    pub plates: Vec<PlateGeometry>,
    pub boxes: Vec<BoxGeometry>,
    /// Instances with no host, or too wide for their host's plate.
    pub unplaced: Vec<InstanceId>,
}

impl SceneSnapshot {
    pub fn to_canonical_json(&self) -> String {
        crate::canonical::to_string(self).expect("scene serialises")
    }

    pub fn plate(&self, id: &HypervisorId) -> Option<&PlateGeometry> {
        self.plates.iter().find(|p| &p.hypervisor_id == id)
    }

    pub fn find_box(&self, id: &InstanceId) -> Option<&BoxGeometry> {
        self.boxes.iter().find(|b| &b.instance_id == id)
    }

    pub fn boxes_on<'a>(&'a self, plate: &'a HypervisorId) -> impl Iterator<Item = &'a BoxGeometry> {
        self.boxes.iter().filter(move |b| &b.plate_id == plate)
    }
}

/// Positioned boxes for one plate.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub boxes: Vec<BoxGeometry>,
    pub overcommitted: bool,
}

/// Shelf-packs `boxes` onto `plate`, writing their grid positions.
///
/// Boxes come back in placement order. Rows may run past the plate's depth;
/// that sets `overcommitted` instead of failing.
pub fn place_boxes(plate: &PlateGeometry, boxes: Vec<BoxGeometry>) -> Result<Placement, TooWide> {
    let items = boxes
        .iter()
        .map(|b| ShelfItem { instance_id: b.instance_id.clone(), width_x: b.width_x, depth_z: b.depth_z })
        .collect();
    let layout = shelve(plate.width_x, plate.depth_z, items)?;
    let mut by_id: BTreeMap<InstanceId, BoxGeometry> =
        boxes.into_iter().map(|b| (b.instance_id.clone(), b)).collect();
    let placed = layout
        .positions
        .into_iter()
        .filter_map(|p| {
            by_id.remove(&p.instance_id).map(|mut b| {
                b.pos_x = p.pos_x;
                b.pos_z = p.pos_z;
                b
            })
        })
        .collect();
    Ok(Placement { boxes: placed, overcommitted: layout.overcommitted })
}

/// Hue of a project: golden-angle steps over the id-sorted project list.
pub fn project_colour(project_id: &ProjectId, projects: &[Project]) -> Result<f64, LayoutError> {
    let mut ids: Vec<&ProjectId> = projects.iter().map(|p| &p.id).collect();
    ids.sort();
    ids.dedup();
    let k = ids
        .binary_search(&project_id)
        .map_err(|_| LayoutError::UnknownProject(project_id.clone()))?;
    Ok(hue_for_index(k))
}

fn hue_for_index(k: usize) -> f64 {
    (k as f64 * PROJECT_HUE_STEP).rem_euclid(360.0)
}

/// Watt range mapped onto the plate's red shading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRange {
    pub min_watts: f64,
    pub max_watts: f64,
}

impl EnergyRange {
    pub fn new(min_watts: f64, max_watts: f64) -> Result<Self, LayoutError> {
        if !(min_watts < max_watts) {
            return Err(LayoutError::EnergyRange { min: min_watts, max: max_watts });
        }
        Ok(Self { min_watts, max_watts })
    }

    pub fn shade(&self, watts: f64) -> f64 {
        ((watts - self.min_watts) / (self.max_watts - self.min_watts)).clamp(0.0, 1.0)
    }
}

impl Default for EnergyRange {
    fn default() -> Self {
        Self { min_watts: 50.0, max_watts: 400.0 }
    }
}

/// Linear darkness for `watts` within `[min_watts, max_watts]`, clamped to [0, 1].
pub fn energy_shade(watts: f64, min_watts: f64, max_watts: f64) -> Result<f64, LayoutError> {
    Ok(EnergyRange::new(min_watts, max_watts)?.shade(watts))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    pub energy: EnergyRange,
}

/// Derives the full scene for one poll.
pub fn build_scene(
    state: &CloudState,
    readings: &[EnergyReading],
    pending: &[PendingOperation],
    config: &LayoutConfig,
) -> Result<SceneSnapshot, LayoutError> {
    let report = validate(state);
    if !report.is_valid() {
        return Err(LayoutError::InvalidState(report));
    }
    // re-check in case the config was built by hand
    let energy = EnergyRange::new(config.energy.min_watts, config.energy.max_watts)?;

    let watts: BTreeMap<&HypervisorId, f64> =
        readings.iter().map(|r| (&r.hypervisor_id, r.watts)).collect();
    let blinking: BTreeSet<&str> = pending.iter().map(|p| p.subject_id.as_str()).collect();

    let mut project_ids: Vec<&ProjectId> = state.projects.iter().map(|p| &p.id).collect();
    project_ids.sort();
    let hue_of = |id: &ProjectId| -> Result<f64, LayoutError> {
        project_ids
            .binary_search(&id)
            .map(hue_for_index)
            .map_err(|_| LayoutError::UnknownProject(id.clone()))
    };

    let mut per_plate: BTreeMap<&HypervisorId, Vec<BoxGeometry>> = BTreeMap::new();
    let mut unplaced = Vec::new();
    for vm in &state.instances {
        let Some(host) = &vm.hypervisor_id else {
            unplaced.push(vm.id.clone());
            continue;
        };
        let flavour = state.flavour(&vm.flavour_id).expect("validated reference");
        let fp = footprint(flavour);
        per_plate.entry(host).or_default().push(BoxGeometry {
            instance_id: vm.id.clone(),
            plate_id: host.clone(),
            name: vm.name.clone(),
            flavour_id: vm.flavour_id.clone(),
            project_id: vm.project_id.clone(),
            status: vm.status,
            width_x: fp.width_x,
            depth_z: fp.depth_z,
            height_y: fp.height_y,
            pos_x: 0,
            pos_z: 0,
            colour_hue: hue_of(&vm.project_id)?,
            translucent: vm.status.is_powered_down(),
            is_blinking: blinking.contains(vm.id.as_str()),
        });
    }

    let mut plates = Vec::with_capacity(state.hypervisors.len());
    let mut boxes = Vec::with_capacity(state.instances.len());
    for host in &state.hypervisors {
        let (width_x, depth_z) = grid_dimensions(host.vcpus_total);
        let reading = watts.get(&host.id).copied();
        let mut plate = PlateGeometry {
            hypervisor_id: host.id.clone(),
            hostname: host.hostname.clone(),
            vcpus_total: host.vcpus_total,
            state: host.state,
            width_x,
            depth_z,
            power_watts: reading,
            energy_shade: reading.map(|w| energy.shade(w)),
            is_down: host.state == HostState::Down,
            is_blinking: blinking.contains(host.id.as_str()),
            overcommitted: false,
        };
        let (fits, too_wide): (Vec<_>, Vec<_>) = per_plate
            .remove(&host.id)
            .unwrap_or_default()
            .into_iter()
            .partition(|b| b.width_x <= width_x);
        unplaced.extend(too_wide.into_iter().map(|b| b.instance_id));
        let placement = place_boxes(&plate, fits)?;
        plate.overcommitted = placement.overcommitted;
        boxes.extend(placement.boxes);
        plates.push(plate);
    }

    plates.sort_by(|a, b| a.hypervisor_id.cmp(&b.hypervisor_id));
    boxes.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    unplaced.sort();
    Ok(SceneSnapshot { at_seq: state.poll_seq, plates, boxes, unplaced })
}
