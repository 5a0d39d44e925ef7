//! Identifier newtypes. All ids are opaque strings on the wire.

use std::borrow::Borrow;
use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

id_type!(
    /// Nova server id (a UUID in real deployments).
    InstanceId
);
id_type!(
    /// Nova hypervisor id.
    HypervisorId
);
id_type!(FlavourId);
id_type!(ProjectId);
id_type!(
    /// Target of a command or event: an instance or a hypervisor id.
    SubjectId
);

impl From<&InstanceId> for SubjectId {
    fn from(id: &InstanceId) -> Self {
        Self(id.0.clone())
    }
}

impl From<&HypervisorId> for SubjectId {
    fn from(id: &HypervisorId) -> Self {
        Self(id.0.clone())
    }
}
