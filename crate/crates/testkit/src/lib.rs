//! Generators and independent oracles shared by the test suites.
//!
//! Nothing in here calls into the layout or diff code it is used to check.

pub mod oracle;
pub mod trace;



use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use twin_core::{
    CloudState, FlavourSpec, HostState, Hypervisor, InstanceStatus, Project, VmInstance,
};

pub fn statuses() -> impl Strategy<Value = InstanceStatus> {
    prop_oneof![
        Just(InstanceStatus::Active),
        Just(InstanceStatus::Shutoff),
        Just(InstanceStatus::Suspended),
        Just(InstanceStatus::Building),
        Just(InstanceStatus::Migrating),
        Just(InstanceStatus::Error),
    ]
}

pub fn host_states() -> impl Strategy<Value = HostState> {
    prop_oneof![Just(HostState::Up), Just(HostState::Down), Just(HostState::Transitioning)]
}

/// Random state whose references all resolve.
pub fn valid_state() -> impl Strategy<Value = CloudState> {
    (
        1usize..4,
        1usize..5,
        prop::collection::vec((1u32..=64, host_states(), prop::option::of(0.0f64..600.0)), 1..5),
        prop::collection::vec((any::<prop::sample::Index>(), any::<prop::sample::Index>(), any::<prop::sample::Index>(), statuses(), any::<bool>()), 0..14),
        0u64..1000,
    )
        .prop_map(|(n_projects, n_extra_flavours, hosts, vms, seq)| {
            let mut flavours = FlavourSpec::openstack_defaults();
            for k in 0..n_extra_flavours {
                flavours.push(FlavourSpec {
                    id: format!("x{k}").into(),
                    name: format!("custom.{k}"),
                    vcpus: (k as u32 % 6) + 1,
                    ram_mb: 256 * (k as u64 + 1),
                    disk_gb: 0,
                });
            }
            let projects: Vec<Project> = (0..n_projects)
                .map(|k| Project { id: format!("p{k}").into(), name: format!("project {k}") })
                .collect();
            let hypervisors: Vec<Hypervisor> = hosts
                .into_iter()
                .enumerate()
                .map(|(k, (vcpus, state, watts))| Hypervisor {
                    id: format!("h{k}").into(),
                    hostname: format!("compute-{k:02}"),
                    vcpus_total: vcpus,
                    state,
                    power_watts: watts,
                })
                .collect();
            let instances = vms
                .into_iter()
                .enumerate()
                .map(|(k, (f, p, h, status, hostless))| VmInstance {
                    id: format!("vm-{k:03}").into(),
                    name: format!("vm {k}"),
                    flavour_id: flavours[f.index(flavours.len())].id.clone(),
                    project_id: projects[p.index(projects.len())].id.clone(),
                    hypervisor_id: if status == InstanceStatus::Building && hostless {
                        None
                    } else {
                        Some(hypervisors[h.index(hypervisors.len())].id.clone())
                    },
                    status,
                })
                .collect();
            CloudState {
                poll_seq: seq,
                observed_at: Utc.with_ymd_and_hms(2024, 5, 1, 9, 0, 0).unwrap(),
                hypervisors,
                instances,
                flavours,
                projects,
            }
        })
}

/// A random edit of `s`, producing a later valid snapshot.
pub fn evolve(s: &CloudState, edits: &[(u8, usize, usize)]) -> CloudState {
    let mut n = s.clone();
    n.poll_seq += 1;
    for &(op, a, b) in edits {
        match op % 6 {
            0 if !n.instances.is_empty() => {
                let i = a % n.instances.len();
                n.instances.remove(i);
            }
            1 => {
                let mut vm = VmInstance {
                    id: format!("new-{a}-{b}").into(),
                    name: "fresh".into(),
                    flavour_id: n.flavours[a % n.flavours.len()].id.clone(),
                    project_id: n.projects[b % n.projects.len()].id.clone(),
                    hypervisor_id: Some(n.hypervisors[b % n.hypervisors.len()].id.clone()),
                    status: InstanceStatus::Active,
                };
                if n.instance(&vm.id).is_none() {
                    vm.name = format!("fresh {a}");
                    n.instances.push(vm);
                }
            }
            2 if !n.instances.is_empty() => {
                let i = a % n.instances.len();
                let all = [
                    InstanceStatus::Active,
                    InstanceStatus::Shutoff,
                    InstanceStatus::Suspended,
                    InstanceStatus::Migrating,
                    InstanceStatus::Error,
                ];
                n.instances[i].status = all[b % all.len()];
                if n.instances[i].hypervisor_id.is_none() {
                    n.instances[i].hypervisor_id = Some(n.hypervisors[0].id.clone());
                }
            }
            3 if !n.instances.is_empty() => {
                let i = a % n.instances.len();
                n.instances[i].hypervisor_id = Some(n.hypervisors[b % n.hypervisors.len()].id.clone());
            }
            4 => {
                let i = a % n.hypervisors.len();
                let all = [HostState::Up, HostState::Down, HostState::Transitioning];
                n.hypervisors[i].state = all[b % 3];
            }
            5 => {
                let i = a % n.hypervisors.len();
                n.hypervisors[i].power_watts = if b % 4 == 0 { None } else { Some(b as f64 * 3.5) };
            }
            _ => {}
        }
    }
    n
}
