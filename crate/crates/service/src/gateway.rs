//! North-facing HTTP API.
//!
//! `GET /scene` serves the latest published snapshot, `GET /events` streams
//! events as server-sent events, `POST /commands` queues commands to the
//! reconciler and `GET /healthz` reports readiness. There is no
//! authentication; put the gateway behind something that does it.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::{self, error::RecvError};
use twin_core::canonical;

use crate::cloud::CloudError;
use crate::driver::ServiceHandle;
use crate::events::StreamEvent;
use crate::hub::Hub;
use crate::reconciler::{Command, Rejection};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatewayConfig {
    pub heartbeat: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self { heartbeat: Duration::from_secs(10) }
    }
}

#[derive(Clone)]
struct AppState {
    service: ServiceHandle,
    config: GatewayConfig,
}

pub fn router(service: ServiceHandle, config: GatewayConfig) -> Router {
    Router::new()
        .route("/scene", get(get_scene))
        .route("/events", get(get_events))
        .route("/commands", post(post_command))
        .route("/healthz", get(get_healthz))
        .with_state(AppState { service, config })
}

fn json_response(status: StatusCode, body: &impl Serialize) -> Response {
    let text = canonical::to_string(body).expect("response bodies serialise");
    (status, [(header::CONTENT_TYPE, "application/json")], text).into_response()
}

const RETRY_AFTER_S: u64 = 1;

fn warming() -> Response {
    let mut resp = json_response(
        StatusCode::SERVICE_UNAVAILABLE,
        &json!({
            "error": "warming_up",
            "message": "no snapshot has been published yet",
            "retry_after_s": RETRY_AFTER_S,
        }),
    );
    resp.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from(RETRY_AFTER_S));
    resp
}

async fn get_scene(State(app): State<AppState>) -> Response {
    match app.service.hub().scene() {
        Some(p) => ([(header::CONTENT_TYPE, "application/json")], p.json.clone()).into_response(),
        None => warming(),
    }
}

async fn get_healthz(State(app): State<AppState>) -> Response {
    let hub = app.service.hub();
    match hub.scene() {
        Some(p) => json_response(
            StatusCode::OK,
            &json!({
                "status": if p.stale { "stale" } else { "ready" },
                "stale": p.stale,
                "at_seq": p.scene.at_seq,
                "event_seq": hub.head(),
            }),
        ),
        None => {
            let mut resp = json_response(StatusCode::SERVICE_UNAVAILABLE, &json!({ "status": "warming_up" }));
            resp.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from(RETRY_AFTER_S));
            resp
        }
    }
}

fn rejection_status(r: &Rejection) -> StatusCode {
    match r {
        Rejection::NotReady => StatusCode::SERVICE_UNAVAILABLE,
        Rejection::UnknownSubject(_) => StatusCode::NOT_FOUND,
        Rejection::Busy { .. } => StatusCode::CONFLICT,
        Rejection::NoOp(_) | Rejection::InvalidTarget(_) | Rejection::Malformed(_) => StatusCode::BAD_REQUEST,
        Rejection::Cloud(CloudError::Conflict(_) | CloudError::Policy(_)) => StatusCode::CONFLICT,
        Rejection::Cloud(CloudError::NotFound(_)) => StatusCode::NOT_FOUND,
        Rejection::Cloud(CloudError::BadRequest(_)) => StatusCode::BAD_REQUEST,
        Rejection::Cloud(_) => StatusCode::BAD_GATEWAY,
    }
}

async fn post_command(State(app): State<AppState>, body: Bytes) -> Response {
    let cmd: Command = match serde_json::from_slice(&body) {
        Ok(c) => c,
        Err(e) => {
            return json_response(
                StatusCode::BAD_REQUEST,
                &json!({ "error": "malformed", "message": e.to_string() }),
            )
        }
    };
    match app.service.submit(cmd).await {
        Ok(op) => json_response(StatusCode::ACCEPTED, &json!({ "op_id": op.op_id, "op": op })),
        Err(r) => {
            let mut resp =
                json_response(rejection_status(&r), &json!({ "error": r.code(), "message": r.to_string() }));
            if r == Rejection::NotReady {
                resp.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from(RETRY_AFTER_S));
            }
            resp
        }
    }
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    since: Option<u64>,
}

fn sse_event(ev: &StreamEvent) -> Event {
    Event::default().id(ev.seq.to_string()).event(ev.event.type_name()).data(ev.to_json())
}

fn resync_event(head: u64) -> Event {
    let data = json!({
        "reason": "requested position is older than the retained window; fetch /scene and resume from its event_seq",
        "event_seq": head,
    });
    Event::default().event("resync").data(canonical::to_compact(&data).expect("serialises"))
}

struct Feed {
    hub: Arc<Hub>,
    queue: VecDeque<Event>,
    live: broadcast::Receiver<Arc<StreamEvent>>,
    heartbeat: tokio::time::Interval,
    last: u64,
}

impl Feed {
    fn start(hub: Arc<Hub>, since: Option<u64>, heartbeat: Duration) -> Self {
        let sub = hub.subscribe(since);
        let mut queue = VecDeque::new();
        if sub.resync {
            queue.push_back(resync_event(sub.head));
        }
        let mut last = since.unwrap_or(sub.head).min(sub.head);
        for ev in &sub.backlog {
            queue.push_back(sse_event(ev));
            last = ev.seq;
        }
        let start = tokio::time::Instant::now() + heartbeat;
        Self {
            hub,
            queue,
            live: sub.live,
            heartbeat: tokio::time::interval_at(start, heartbeat),
            last,
        }
    }

    /// Catches up from the retained log after the live channel overflowed.
    fn recover(&mut self) {
        let sub = self.hub.subscribe(Some(self.last));
        if sub.resync {
            self.queue.push_back(resync_event(sub.head));
        }
        for ev in &sub.backlog {
            self.queue.push_back(sse_event(ev));
            self.last = ev.seq;
        }
        self.live = sub.live;
    }

    async fn next(&mut self) -> Option<Event> {
        loop {
            if let Some(e) = self.queue.pop_front() {
                return Some(e);
            }
            tokio::select! {
                r = self.live.recv() => match r {
                    Ok(ev) if ev.seq > self.last => {
                        self.last = ev.seq;
                        return Some(sse_event(&ev));
                    }
                    Ok(_) => {}
                    Err(RecvError::Lagged(_)) => self.recover(),
                    Err(RecvError::Closed) => return None,
                },
                _ = self.heartbeat.tick() => {
                    let data = json!({ "event_seq": self.hub.head() });
                    return Some(Event::default().event("heartbeat").data(canonical::to_compact(&data).expect("serialises")));
                }
            }
        }
    }
}

fn feed_stream(feed: Feed) -> impl Stream<Item = Result<Event, Infallible>> {
    futures::stream::unfold(feed, |mut feed| async move { feed.next().await.map(|e| (Ok(e), feed)) })
}

async fn get_events(State(app): State<AppState>, Query(q): Query<EventsQuery>, headers: HeaderMap) -> Response {
    // browsers reconnecting an EventSource send the last id they saw
    let since = q.since.or_else(|| {
        headers
            .get("last-event-id")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse().ok())
    });
    let feed = Feed::start(app.service.hub().clone(), since, app.config.heartbeat);
    Sse::new(feed_stream(feed)).into_response()
}
