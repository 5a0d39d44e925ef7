//! How requests reach the cloud.
//!
//! The client builds [`WireRequest`]s and never touches sockets itself. Two
//! transports exist: blocking HTTP for real deployments and the standalone
//! mock, and a direct call into an embedded [`MockWorld`].

use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;
use twin_core::wire::{WireRequest, WireResponse};
use twin_mock::{MockReply, MockWorld};

use crate::clock::Clock;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("invalid request: {0}")]
    Request(String),
}

pub trait Transport: Send + Sync {
    fn execute(&self, req: WireRequest) -> Result<WireResponse, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn execute(&self, req: WireRequest) -> Result<WireResponse, TransportError> {
        (**self).execute(req)
    }
}

/// HTTP/1.1 over a pooled blocking agent.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for HttpTransport {
    fn execute(&self, req: WireRequest) -> Result<WireResponse, TransportError> {
        let mut builder = ureq::http::Request::builder()
            .method(req.method.as_str())
            .uri(req.url.as_str());
        for (k, v) in &req.headers {
            builder = builder.header(k.as_str(), v.as_str());
        }
        // GET requests must not carry a body at all, not even an empty one
        let sent = if req.body.is_empty() {
            builder.body(()).map(|r| self.agent.run(r))
        } else {
            builder.body(req.body).map(|r| self.agent.run(r))
        };
        let mut resp = sent
            .map_err(|e| TransportError::Request(e.to_string()))?
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => TransportError::Timeout,
                ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => TransportError::Timeout,
                other => TransportError::Connect(other.to_string()),
            })?;
        let mut out = WireResponse::new(resp.status().as_u16());
        for (name, value) in resp.headers() {
            if let Ok(v) = value.to_str() {
                out.headers.insert(name.as_str().to_ascii_lowercase(), v.to_owned());
            }
        }
        out.body = resp.body_mut().read_to_vec().map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Connect(other.to_string()),
        })?;
        Ok(out)
    }
}

/// Calls straight into a shared mock world, stamping each request with the
/// injected clock's current instant.
pub struct InProcessTransport {
    world: Arc<Mutex<MockWorld>>,
    clock: Arc<dyn Clock>,
}

impl InProcessTransport {
    pub fn new(world: Arc<Mutex<MockWorld>>, clock: Arc<dyn Clock>) -> Self {
        Self { world, clock }
    }
}

impl Transport for InProcessTransport {
    fn execute(&self, req: WireRequest) -> Result<WireResponse, TransportError> {
        let now = self.clock.now();
        let reply = self.world.lock().unwrap().handle_request(&req, now);
        match reply {
            MockReply::Response(r) => Ok(r),
            MockReply::Timeout => Err(TransportError::Timeout),
        }
    }
}
