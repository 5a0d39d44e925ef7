use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use twin_core::layout::{grid_dimensions, MIN_BOX_HEIGHT, RAM_MB_PER_VOLUME_UNIT};
use twin_core::{
    build_scene, footprint, place_boxes, project_colour, BoxGeometry, EnergyReading, FlavourSpec,
    HostState, InstanceStatus, LayoutConfig, PlateGeometry, Project,
};
use twin_testkit::oracle::{check_rows, Rect};
use twin_testkit::valid_state;

fn plate(vcpus: u32) -> PlateGeometry {
    let (w, d) = grid_dimensions(vcpus);
    PlateGeometry {
        hypervisor_id: "h".into(),
        hostname: "h".into(),
        vcpus_total: vcpus,
        state: HostState::Up,
        width_x: w,
        depth_z: d,
        power_watts: None,
        energy_shade: None,
        is_down: false,
        is_blinking: false,
        overcommitted: false,
    }
}

fn unplaced_box(id: String, vcpus: u32) -> BoxGeometry {
    let (w, d) = grid_dimensions(vcpus);
    BoxGeometry {
        instance_id: id.into(),
        plate_id: "h".into(),
        name: String::new(),
        flavour_id: "f".into(),
        project_id: "p".into(),
        status: InstanceStatus::Active,
        width_x: w,
        depth_z: d,
        height_y: 1.0,
        pos_x: 0,
        pos_z: 0,
        colour_hue: 0.0,
        translucent: false,
        is_blinking: false,
    }
}

fn rects(boxes: &[BoxGeometry]) -> Vec<Rect> {
    boxes
        .iter()
        .map(|b| Rect {
            id: b.instance_id.to_string(),
            w: b.width_x,
            d: b.depth_z,
            x: b.pos_x,
            z: b.pos_z,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn placement_obeys_row_rules(
        plate_vcpus in prop_oneof![Just(32u32), 1u32..=64],
        sizes in prop::collection::vec(1u32..=16, 0..20),
    ) {
        let plate = plate(plate_vcpus);
        let boxes: Vec<_> = sizes
            .iter()
            .enumerate()
            .filter(|(_, v)| grid_dimensions(**v).0 <= plate.width_x)
            .map(|(k, v)| unplaced_box(format!("vm-{k:02}"), *v))
            .collect();
        let placed = place_boxes(&plate, boxes.clone()).unwrap();
        prop_assert_eq!(placed.boxes.len(), boxes.len());
        let r = rects(&placed.boxes);
        prop_assert_eq!(check_rows(plate.width_x, plate.depth_z, &r, placed.overcommitted), Ok(()));
        if !placed.overcommitted {
            let area: u32 = placed.boxes.iter().map(|b| b.width_x * b.depth_z).sum();
            prop_assert!(area <= plate.width_x * plate.depth_z);
        }
        // input order does not matter
        let mut reversed = boxes;
        reversed.reverse();
        prop_assert_eq!(place_boxes(&plate, reversed).unwrap(), placed);
    }

    #[test]
    fn footprint_geometry_law(vcpus in 1u32..=128, ram_mb in 1u64..=1_048_576) {
        let f = FlavourSpec { id: "f".into(), name: "f".into(), vcpus, ram_mb, disk_gb: 0 };
        let fp = footprint(&f);
        prop_assert_eq!(fp.width_x * fp.depth_z, vcpus);
        prop_assert!(fp.depth_z <= fp.width_x);
        let volume_units = ram_mb as f64 / RAM_MB_PER_VOLUME_UNIT;
        if fp.height_y > MIN_BOX_HEIGHT {
            let rel = (fp.volume() - volume_units).abs() / volume_units;
            prop_assert!(rel <= 1e-12, "volume {} vs {}", fp.volume(), volume_units);
        } else {
            prop_assert!(volume_units <= MIN_BOX_HEIGHT * vcpus as f64);
        }
    }

    #[test]
    fn scenes_never_overlap_and_are_deterministic(
        s in valid_state(),
        watts in prop::collection::vec(0.0f64..800.0, 0..5),
    ) {
        let readings: Vec<EnergyReading> = s
            .hypervisors
            .iter()
            .zip(watts.iter())
            .map(|(h, w)| EnergyReading { hypervisor_id: h.id.clone(), watts: *w, read_at: s.observed_at })
            .collect();
        let config = LayoutConfig::default();
        let scene = build_scene(&s, &readings, &[], &config).unwrap();
        let again = build_scene(&s, &readings, &[], &config).unwrap();
        prop_assert_eq!(scene.to_canonical_json(), again.to_canonical_json());

        prop_assert_eq!(scene.plates.len(), s.hypervisors.len());
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for b in &scene.boxes {
            *seen.entry(b.instance_id.to_string()).or_default() += 1;
        }
        for id in &scene.unplaced {
            *seen.entry(id.to_string()).or_default() += 1;
        }
        for vm in &s.instances {
            prop_assert_eq!(seen.get(vm.id.as_str()), Some(&1), "{} placed once", vm.id);
        }
        for p in &scene.plates {
            let on: Vec<BoxGeometry> = scene.boxes_on(&p.hypervisor_id).cloned().collect();
            prop_assert_eq!(check_rows(p.width_x, p.depth_z, &rects(&on), p.overcommitted), Ok(()));
            prop_assert_eq!(p.width_x * p.depth_z, p.vcpus_total);
            let has_reading = readings.iter().any(|r| r.hypervisor_id == p.hypervisor_id);
            prop_assert_eq!(p.energy_shade.is_some(), has_reading);
        }
        for b in &scene.boxes {
            let vm = s.instance(&b.instance_id).unwrap();
            let f = s.flavour(&vm.flavour_id).unwrap();
            prop_assert_eq!(b.width_x * b.depth_z, f.vcpus);
            prop_assert_eq!(b.translucent, matches!(vm.status, InstanceStatus::Shutoff | InstanceStatus::Suspended));
        }
    }
}

#[test]
fn hues_stay_apart_for_a_hundred_projects() {
    let projects: Vec<Project> = (0..100)
        .map(|k| Project { id: format!("project-{k:03}").into(), name: String::new() })
        .collect();
    let hues: Vec<f64> = projects.iter().map(|p| project_colour(&p.id, &projects).unwrap()).collect();
    for i in 0..hues.len() {
        assert!((0.0..360.0).contains(&hues[i]));
        for j in (i + 1)..hues.len() {
            let d = (hues[i] - hues[j]).abs();
            let circular = d.min(360.0 - d);
            assert!(circular > 0.5, "projects {i} and {j}: {} vs {}", hues[i], hues[j]);
        }
    }
}

#[test]
fn colours_are_stable_across_polls() {
    let s = twin_core::model::fixtures::f1();
    let mut later = s.clone();
    later.poll_seq += 1;
    later.observed_at = Utc.with_ymd_and_hms(2024, 5, 1, 9, 0, 1).unwrap();
    let a = build_scene(&s, &[], &[], &LayoutConfig::default()).unwrap();
    let b = build_scene(&later, &[], &[], &LayoutConfig::default()).unwrap();
    let hues = |sc: &twin_core::SceneSnapshot| -> Vec<f64> { sc.boxes.iter().map(|b| b.colour_hue).collect() };
    assert_eq!(hues(&a), hues(&b));
}
