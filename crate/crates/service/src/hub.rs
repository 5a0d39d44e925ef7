//! Where published snapshots and events live.
//!
//! The reconciler's driver is the only writer. Readers get immutable
//! [`Arc`]s; a subscription is taken under the same lock as publication so
//! the retained backlog and the live channel neither overlap nor leave a gap.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::Serialize;
use tokio::sync::broadcast;
use twin_core::SceneSnapshot;

use crate::events::{StreamEvent, TwinEvent};

pub const DEFAULT_RETENTION: usize = 1000;

/// A scene as served by the gateway.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PublishedScene {
    #[serde(flatten)]
    pub scene: SceneSnapshot,
    /// True after repeated failed polls; the geometry is the last good one.
    pub stale: bool,
    /// Highest event seq published with or before this scene.
    pub event_seq: u64,
    /// Canonical JSON, rendered once at publication.
    #[serde(skip)]
    pub json: String,
}

impl PublishedScene {
    fn new(scene: SceneSnapshot, stale: bool, event_seq: u64) -> Self {
        let mut p = Self { scene, stale, event_seq, json: String::new() };
        p.json = twin_core::canonical::to_string(&p).expect("scene serialises");
        p
    }
}

/// Where a subscriber starts.
pub struct Subscription {
    /// True when the requested position is older than the retained window;
    /// the client must fetch a fresh scene.
    pub resync: bool,
    pub backlog: Vec<Arc<StreamEvent>>,
    pub live: broadcast::Receiver<Arc<StreamEvent>>,
    /// Latest seq at subscription time.
    pub head: u64,
}

struct Inner {
    scene: Option<Arc<PublishedScene>>,
    log: VecDeque<Arc<StreamEvent>>,
    head: u64,
    poll_seq: u64,
}

pub struct Hub {
    inner: Mutex<Inner>,
    tx: broadcast::Sender<Arc<StreamEvent>>,
    retention: usize,
}

impl Default for Hub {
    fn default() -> Self {
        Self::new(DEFAULT_RETENTION)
    }
}

impl Hub {
    pub fn new(retention: usize) -> Self {
        let (tx, _) = broadcast::channel(retention.max(16));
        Self {
            inner: Mutex::new(Inner { scene: None, log: VecDeque::new(), head: 0, poll_seq: 0 }),
            tx,
            retention,
        }
    }

    pub fn retention(&self) -> usize {
        self.retention
    }

    pub fn scene(&self) -> Option<Arc<PublishedScene>> {
        self.inner.lock().unwrap().scene.clone()
    }

    pub fn head(&self) -> u64 {
        self.inner.lock().unwrap().head
    }

    /// Appends `events` and, if given, replaces the scene, atomically.
    pub fn publish(
        &self,
        at: DateTime<Utc>,
        events: Vec<TwinEvent>,
        scene: Option<(SceneSnapshot, bool)>,
    ) -> Vec<Arc<StreamEvent>> {
        let mut inner = self.inner.lock().unwrap();
        if let Some((s, _)) = &scene {
            inner.poll_seq = s.at_seq;
        }
        let mut out = Vec::with_capacity(events.len());
        for event in events {
            inner.head += 1;
            let ev = Arc::new(StreamEvent { seq: inner.head, at_poll: inner.poll_seq, at, event });
            inner.log.push_back(ev.clone());
            if inner.log.len() > self.retention {
                inner.log.pop_front();
            }
            // no receivers is fine
            let _ = self.tx.send(ev.clone());
            out.push(ev);
        }
        match scene {
            Some((s, stale)) => {
                let head = inner.head;
                inner.scene = Some(Arc::new(PublishedScene::new(s, stale, head)));
            }
            None => {
                // the staleness flag can change without a new scene
                let stale_now = out.iter().rev().find_map(|e| match e.event {
                    TwinEvent::StaleChanged { stale } => Some(stale),
                    _ => None,
                });
                let head = inner.head;
                if let Some(prev) = inner.scene.clone() {
                    let stale = stale_now.unwrap_or(prev.stale);
                    if stale != prev.stale || head != prev.event_seq {
                        inner.scene = Some(Arc::new(PublishedScene::new(prev.scene.clone(), stale, head)));
                    }
                }
            }
        }
        out
    }

    /// Events after `since`, then everything published from now on.
    /// Without `since` only new events are delivered.
    pub fn subscribe(&self, since: Option<u64>) -> Subscription {
        let inner = self.inner.lock().unwrap();
        let live = self.tx.subscribe();
        let head = inner.head;
        let since = since.unwrap_or(head).min(head);
        let oldest = inner.log.front().map(|e| e.seq).unwrap_or(head + 1);
        let resync = since + 1 < oldest;
        let backlog = inner.log.iter().filter(|e| e.seq > since).cloned().collect();
        Subscription { resync, backlog, live, head }
    }
}
