//! Standalone HTTP front for a [`MockWorld`], driven by the wall clock.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::State;
use axum::http::{HeaderMap, HeaderName, HeaderValue, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use tokio::net::TcpListener;
use twin_core::wire::WireRequest;

use crate::world::{MockReply, MockWorld};

/// How long a request hit by a timeout fault is held before the connection
/// gets a 504.
pub const HANG: Duration = Duration::from_secs(30);

#[derive(Clone)]
struct Shared {
    world: Arc<Mutex<MockWorld>>,
    hang: Duration,
}

pub fn router(world: Arc<Mutex<MockWorld>>) -> Router {
    router_with_hang(world, HANG)
}

pub fn router_with_hang(world: Arc<Mutex<MockWorld>>, hang: Duration) -> Router {
    Router::new().fallback(handle).with_state(Shared { world, hang })
}

async fn handle(
    State(shared): State<Shared>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let host = headers
        .get("host")
        .and_then(|h| h.to_str().ok())
        .unwrap_or("localhost")
        .to_owned();
    let path = uri.path_and_query().map(|p| p.as_str()).unwrap_or("/");
    let mut wire_headers = BTreeMap::new();
    for (k, v) in &headers {
        if let Ok(v) = v.to_str() {
            wire_headers.insert(k.as_str().to_ascii_lowercase(), v.to_owned());
        }
    }
    let req = WireRequest {
        method: method.as_str().to_owned(),
        url: format!("http://{host}{path}"),
        headers: wire_headers,
        body: body.to_vec(),
    };
    let reply = {
        let mut world = shared.world.lock().expect("mock world lock poisoned");
        world.handle_request(&req, chrono::Utc::now())
    };
    match reply {
        MockReply::Timeout => {
            tokio::time::sleep(shared.hang).await;
            StatusCode::GATEWAY_TIMEOUT.into_response()
        }
        MockReply::Response(resp) => {
            let mut out = Response::new(Body::from(resp.body));
            *out.status_mut() = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            for (k, v) in resp.headers {
                if let (Ok(k), Ok(v)) = (HeaderName::try_from(k), HeaderValue::try_from(v)) {
                    out.headers_mut().insert(k, v);
                }
            }
            out
        }
    }
}

/// Binds `addr` and serves until the task is dropped.
pub async fn serve(world: Arc<Mutex<MockWorld>>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "mock cloud listening");
    axum::serve(listener, router(world)).await
}
