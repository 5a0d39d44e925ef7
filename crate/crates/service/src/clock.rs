//! Time source for the reconciler and the retry loop.
//!
//! Production code reads the wall clock; tests and scenario replay use a
//! [`ManualClock`] that only moves when told to, so backoff sleeps cost
//! nothing and every timestamp is reproducible.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
    /// Blocks for `d`. Virtual clocks return immediately.
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Shared virtual clock. Clones observe the same instant.
#[derive(Debug, Clone)]
pub struct ManualClock(Arc<Mutex<DateTime<Utc>>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Arc::new(Mutex::new(start)))
    }

    pub fn set(&self, t: DateTime<Utc>) {
        let mut now = self.0.lock().unwrap();
        if t > *now {
            *now = t;
        }
    }

    pub fn advance(&self, d: chrono::Duration) {
        let mut now = self.0.lock().unwrap();
        if d > chrono::Duration::zero() {
            *now += d;
        }
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap()
    }

    fn sleep(&self, _d: Duration) {}
}
