//! Runs a [`Reconciler`] on its own thread.
//!
//! The thread owns the reconciler outright. Commands from any number of
//! gateway sessions are queued to it and answered over oneshot channels, so
//! the cloud only ever sees one call at a time.

use std::sync::mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use tokio::sync::oneshot;
use twin_core::PendingOperation;

use crate::events::TwinEvent;
use crate::hub::Hub;
use crate::reconciler::{Command, Reconciler, Rejection, TickReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickMode {
    /// Tick at once, then every interval.
    Interval(Duration),
    /// Tick only when asked through [`ServiceHandle::tick_now`].
    Manual,
}

type Reply<T> = oneshot::Sender<T>;

enum Msg {
    Command(Command, Reply<Result<PendingOperation, Rejection>>),
    Tick(Reply<TickReport>),
    Shutdown,
}

/// Cheap to clone; every clone talks to the same reconciler thread.
#[derive(Clone)]
pub struct ServiceHandle {
    tx: mpsc::Sender<Msg>,
    hub: Arc<Hub>,
}

pub struct Driver {
    handle: ServiceHandle,
    thread: Option<JoinHandle<()>>,
}

/// Applies a tick's results to the hub.
pub fn publish_tick(hub: &Hub, reconciler: &Reconciler, report: &TickReport) {
    let at = reconciler.session().client().clock().now();
    let scene = report.scene.clone().map(|s| (s, report.stale));
    hub.publish(at, report.events.clone(), scene);
}

/// Submits `cmd` and publishes the acceptance event together with a scene
/// in which the subject already blinks.
pub fn apply_command(hub: &Hub, reconciler: &mut Reconciler, cmd: &Command) -> Result<PendingOperation, Rejection> {
    let result = reconciler.submit(cmd);
    match &result {
        Ok(op) => {
            let at = reconciler.session().client().clock().now();
            let scene = reconciler.current_scene().map(|s| (s, reconciler.is_stale()));
            hub.publish(at, vec![TwinEvent::OpAccepted { op: op.clone() }], scene);
        }
        Err(r) => tracing::info!(subject = %cmd.subject, reason = %r, "command rejected"),
    }
    result
}

fn run(mut reconciler: Reconciler, hub: Arc<Hub>, mode: TickMode, rx: mpsc::Receiver<Msg>) {
    let mut next_tick = Instant::now();
    loop {
        let msg = match mode {
            TickMode::Manual => match rx.recv() {
                Ok(m) => m,
                Err(_) => return,
            },
            TickMode::Interval(every) => {
                let wait = next_tick.saturating_duration_since(Instant::now());
                match rx.recv_timeout(wait) {
                    Ok(m) => m,
                    Err(mpsc::RecvTimeoutError::Timeout) => {
                        let report = reconciler.tick();
                        publish_tick(&hub, &reconciler, &report);
                        next_tick += every;
                        // after a slow tick, skip missed slots instead of bursting
                        let now = Instant::now();
                        if next_tick < now {
                            next_tick = now + every;
                        }
                        continue;
                    }
                    Err(mpsc::RecvTimeoutError::Disconnected) => return,
                }
            }
        };
        match msg {
            Msg::Command(cmd, reply) => {
                let _ = reply.send(apply_command(&hub, &mut reconciler, &cmd));
            }
            Msg::Tick(reply) => {
                let report = reconciler.tick();
                publish_tick(&hub, &reconciler, &report);
                let _ = reply.send(report);
            }
            Msg::Shutdown => return,
        }
    }
}

impl Driver {
    pub fn spawn(reconciler: Reconciler, hub: Arc<Hub>, mode: TickMode) -> Self {
        let (tx, rx) = mpsc::channel();
        let thread_hub = hub.clone();
        let thread = std::thread::Builder::new()
            .name("reconciler".into())
            .spawn(move || run(reconciler, thread_hub, mode, rx))
            .expect("spawn reconciler thread");
        Self { handle: ServiceHandle { tx, hub }, thread: Some(thread) }
    }

    pub fn handle(&self) -> ServiceHandle {
        self.handle.clone()
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        let _ = self.handle.tx.send(Msg::Shutdown);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Driver {
    fn drop(&mut self) {
        self.stop();
    }
}

const GONE: &str = "reconciler thread has stopped";

impl ServiceHandle {
    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    pub async fn submit(&self, cmd: Command) -> Result<PendingOperation, Rejection> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(Msg::Command(cmd, tx)).map_err(|_| Rejection::NotReady)?;
        rx.await.map_err(|_| Rejection::NotReady)?
    }

    pub fn submit_blocking(&self, cmd: Command) -> Result<PendingOperation, Rejection> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(Msg::Command(cmd, tx)).map_err(|_| Rejection::NotReady)?;
        rx.blocking_recv().map_err(|_| Rejection::NotReady)?
    }

    /// Runs a tick now and waits for it to be published.
    pub fn tick_now(&self) -> TickReport {
        let (tx, rx) = oneshot::channel();
        self.tx.send(Msg::Tick(tx)).expect(GONE);
        rx.blocking_recv().expect(GONE)
    }

    pub async fn tick_now_async(&self) -> TickReport {
        let (tx, rx) = oneshot::channel();
        self.tx.send(Msg::Tick(tx)).expect(GONE);
        rx.await.expect(GONE)
    }
}
