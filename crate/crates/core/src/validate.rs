//! Referential-integrity and uniqueness checks over a [`CloudState`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{CloudState, InstanceStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Collection {
    Hypervisors,
    Instances,
    Flavours,
    Projects,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    DuplicateId {
        collection: Collection,
        id: String,
    },
    DanglingReference {
        instance_id: String,
        field: String,
        target: String,
    },
    /// A non-building instance without a host.
    MissingHost { instance_id: String },
    InvalidValue {
        collection: Collection,
        id: String,
        reason: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { collection, id } => {
                write!(f, "duplicate id {id} in {collection:?}")
            }
            Violation::DanglingReference { instance_id, field, target } => {
                write!(f, "instance {instance_id}: {field} {target} does not resolve")
            }
            Violation::MissingHost { instance_id } => {
                write!(f, "instance {instance_id} has no hypervisor")
            }
            Violation::InvalidValue { collection, id, reason } => {
                write!(f, "{collection:?} {id}: {reason}")
            }
        }
    }
}

/// All violations found in a state; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidationReport(pub Vec<Violation>);

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.0.is_empty()
    }

    pub fn violations(&self) -> &[Violation] {
        &self.0
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

fn duplicates<'a>(
    collection: Collection,
    ids: impl Iterator<Item = &'a str>,
    out: &mut Vec<Violation>,
) -> BTreeSet<&'a str> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for id in ids {
        *counts.entry(id).or_default() += 1;
    }
    for (id, n) in &counts {
        if *n > 1 {
            out.push(Violation::DuplicateId { collection, id: (*id).to_owned() });
        }
    }
    counts.into_keys().collect()
}

pub fn validate(state: &CloudState) -> ValidationReport {
    let mut out = Vec::new();

    let hosts = duplicates(
        Collection::Hypervisors,
        state.hypervisors.iter().map(|h| h.id.as_str()),
        &mut out,
    );
    duplicates(
        Collection::Instances,
        state.instances.iter().map(|i| i.id.as_str()),
        &mut out,
    );
    let flavours = duplicates(
        Collection::Flavours,
        state.flavours.iter().map(|f| f.id.as_str()),
        &mut out,
    );
    let projects = duplicates(
        Collection::Projects,
        state.projects.iter().map(|p| p.id.as_str()),
        &mut out,
    );

    for h in &state.hypervisors {
        if h.vcpus_total == 0 {
            out.push(Violation::InvalidValue {
                collection: Collection::Hypervisors,
                id: h.id.to_string(),
                reason: "vcpus_total must be at least 1".into(),
            });
        }
        if let Some(w) = h.power_watts {
            if !(w >= 0.0) {
                out.push(Violation::InvalidValue {
                    collection: Collection::Hypervisors,
                    id: h.id.to_string(),
                    reason: format!("power_watts {w} is negative"),
                });
            }
        }
    }
    for f in &state.flavours {
        if f.vcpus == 0 || f.ram_mb == 0 {
            out.push(Violation::InvalidValue {
                collection: Collection::Flavours,
                id: f.id.to_string(),
                reason: "vcpus and ram_mb must be at least 1".into(),
            });
        }
    }

    for i in &state.instances {
        if !flavours.contains(i.flavour_id.as_str()) {
            out.push(Violation::DanglingReference {
                instance_id: i.id.to_string(),
                field: "flavour_id".into(),
                target: i.flavour_id.to_string(),
            });
        }
        if !projects.contains(i.project_id.as_str()) {
            out.push(Violation::DanglingReference {
                instance_id: i.id.to_string(),
                field: "project_id".into(),
                target: i.project_id.to_string(),
            });
        }
        match &i.hypervisor_id {
            Some(h) if !hosts.contains(h.as_str()) => out.push(Violation::DanglingReference {
                instance_id: i.id.to_string(),
                field: "hypervisor_id".into(),
                target: h.to_string(),
            }),
            None if i.status != InstanceStatus::Building => {
                out.push(Violation::MissingHost { instance_id: i.id.to_string() })
            }
            _ => {}
        }
    }

    ValidationReport(out)
}
