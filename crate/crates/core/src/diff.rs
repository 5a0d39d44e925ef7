//! Turning two consecutive snapshots into typed change events.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{HypervisorId, SubjectId};
use crate::model::{CloudState, HostState, Hypervisor, InstanceStatus, VmInstance};

/// Event kinds in their canonical ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    InstanceCreated,
    InstanceDeleted,
    PowerChanged,
    Migrated,
    HostStateChanged,
    MeteringChanged,
    HostAdded,
    HostRemoved,
}

/// Payload carried in an event's `before`/`after` slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventValue {
    Instance(VmInstance),
    Hypervisor(Hypervisor),
    Status(InstanceStatus),
    Host(Option<HypervisorId>),
    HostState(HostState),
    Watts(Option<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudEvent {
    pub kind: EventKind,
    pub subject_id: SubjectId,
    pub before: Option<EventValue>,
    pub after: Option<EventValue>,
    pub at_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("snapshot sequence violated: old poll_seq {old} is not before new poll_seq {new}")]
pub struct SequenceError {
    pub old: u64,
    pub new: u64,
}

/// Differences between `old` and `new`, ordered by kind then subject id.
///
/// Instance and host membership, instance status and placement, host state
/// and metered power are tracked. Renames and flavour changes do not produce
/// events.
pub fn diff_states(old: &CloudState, new: &CloudState) -> Result<Vec<CloudEvent>, SequenceError> {
    if old.poll_seq >= new.poll_seq {
        return Err(SequenceError { old: old.poll_seq, new: new.poll_seq });
    }
    let at_seq = new.poll_seq;
    let mut events = Vec::new();
    let mut push = |kind, subject: &str, before, after| {
        events.push(CloudEvent { kind, subject_id: SubjectId::new(subject), before, after, at_seq })
    };

    let old_vms: BTreeMap<&str, &VmInstance> =
        old.instances.iter().map(|i| (i.id.as_str(), i)).collect();
    let new_vms: BTreeMap<&str, &VmInstance> =
        new.instances.iter().map(|i| (i.id.as_str(), i)).collect();

    for (id, vm) in &new_vms {
        match old_vms.get(id) {
            None => push(EventKind::InstanceCreated, id, None, Some(EventValue::Instance((*vm).clone()))),
            Some(prev) => {
                if prev.status != vm.status {
                    push(
                        EventKind::PowerChanged,
                        id,
                        Some(EventValue::Status(prev.status)),
                        Some(EventValue::Status(vm.status)),
                    );
                }
                if prev.hypervisor_id != vm.hypervisor_id {
                    push(
                        EventKind::Migrated,
                        id,
                        Some(EventValue::Host(prev.hypervisor_id.clone())),
                        Some(EventValue::Host(vm.hypervisor_id.clone())),
                    );
                }
            }
        }
    }
    for (id, vm) in &old_vms {
        if !new_vms.contains_key(id) {
            push(EventKind::InstanceDeleted, id, Some(EventValue::Instance((*vm).clone())), None);
        }
    }

    let old_hosts: BTreeMap<&str, &Hypervisor> =
        old.hypervisors.iter().map(|h| (h.id.as_str(), h)).collect();
    let new_hosts: BTreeMap<&str, &Hypervisor> =
        new.hypervisors.iter().map(|h| (h.id.as_str(), h)).collect();

    for (id, host) in &new_hosts {
        match old_hosts.get(id) {
            None => push(EventKind::HostAdded, id, None, Some(EventValue::Hypervisor((*host).clone()))),
            Some(prev) => {
                if prev.state != host.state {
                    push(
                        EventKind::HostStateChanged,
                        id,
                        Some(EventValue::HostState(prev.state)),
                        Some(EventValue::HostState(host.state)),
                    );
                }
                if prev.power_watts != host.power_watts {
                    push(
                        EventKind::MeteringChanged,
                        id,
                        Some(EventValue::Watts(prev.power_watts)),
                        Some(EventValue::Watts(host.power_watts)),
                    );
                }
            }
        }
    }
    for (id, host) in &old_hosts {
        if !new_hosts.contains_key(id) {
            push(EventKind::HostRemoved, id, Some(EventValue::Hypervisor((*host).clone())), None);
        }
    }

    events.sort_by(|a, b| (a.kind, &a.subject_id).cmp(&(b.kind, &b.subject_id)));
    Ok(events)
}
