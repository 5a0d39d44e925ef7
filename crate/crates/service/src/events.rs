//! Everything the twin publishes on its event stream.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use twin_core::{timefmt, CloudEvent, PendingOperation};

/// Why a pending operation stopped blinking without timing out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetireOutcome {
    /// The cloud reached the goal state.
    Completed,
    /// The instance went into `Error` instead.
    Failed,
    /// The subject disappeared from the cloud while the op was pending.
    SubjectVanished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TwinEvent {
    Cloud(CloudEvent),
    OpAccepted { op: PendingOperation },
    OpRetired { op: PendingOperation, outcome: RetireOutcome },
    OpTimedOut { op: PendingOperation, error: String },
    FetchFailed { consecutive: u32, error: String },
    StaleChanged { stale: bool },
    MeteringUnavailable { error: String },
}

impl TwinEvent {
    /// Value of the `type` tag, also used as the SSE event name.
    pub fn type_name(&self) -> &'static str {
        match self {
            Self::Cloud(_) => "cloud",
            Self::OpAccepted { .. } => "op_accepted",
            Self::OpRetired { .. } => "op_retired",
            Self::OpTimedOut { .. } => "op_timed_out",
            Self::FetchFailed { .. } => "fetch_failed",
            Self::StaleChanged { .. } => "stale_changed",
            Self::MeteringUnavailable { .. } => "metering_unavailable",
        }
    }
}

/// An event with its position in the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    /// Gap-free, starting at 1.
    pub seq: u64,
    /// Poll sequence of the latest snapshot when the event was emitted.
    pub at_poll: u64,
    #[serde(with = "timefmt")]
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub event: TwinEvent,
}

impl StreamEvent {
    pub fn to_json(&self) -> String {
        twin_core::canonical::to_compact(self).expect("events serialise")
    }
}
