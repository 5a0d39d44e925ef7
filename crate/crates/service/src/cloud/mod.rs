//! Client for the Keystone, Nova and ePDU endpoints the twin reads and drives.
//!
//! Calls are blocking, made through a [`Transport`]; timestamps come from the
//! injected [`Clock`]. Nothing here mutates the twin's model: actions return
//! once the cloud has accepted them and the reconciler observes the effect on
//! a later poll.

mod metering;
mod nova;
mod power;
mod session;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use twin_core::wire::{WireRequest, WireResponse};
use twin_core::{validate, CloudState, InstanceId, ValidationReport};
use url::Url;

use crate::clock::Clock;
use crate::transport::{Transport, TransportError};

pub use metering::{MeteringConfig, MeteringSource};
pub use power::{HostAction, HostPower, HostPowerDriver};
pub use session::CloudSession;

/// Compute API microversion sent with every Nova request. 2.1 is the
/// baseline every supported release understands, and it still reports
/// `flavor.id` on servers.
pub const NOVA_MICROVERSION: &str = "2.1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CloudError {
    #[error("bad credentials")]
    BadCredentials,
    #[error("token expired or revoked")]
    TokenExpired,
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("refused by policy: {0}")]
    Policy(String),
    #[error("HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("{0}")]
    Inventory(InventoryFailure),
    #[error("cannot decode {what}: {message}")]
    Decode { what: String, message: String },
    #[error("inventory is inconsistent: {0}")]
    Inconsistent(ValidationReport),
    #[error("configuration: {0}")]
    Config(String),
}

impl CloudError {
    /// Worth retrying later without changing anything.
    pub fn is_transient(&self) -> bool {
        match self {
            Self::Transient(_) => true,
            Self::Inventory(f) => f.failures.iter().all(|(_, e)| e.is_transient()),
            _ => false,
        }
    }
}

impl From<TransportError> for CloudError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Request(m) => Self::Config(m),
            other => Self::Transient(other.to_string()),
        }
    }
}

/// Per-endpoint errors of one inventory fetch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InventoryFailure {
    pub failures: Vec<(String, CloudError)>,
}

impl InventoryFailure {
    pub fn endpoints(&self) -> Vec<&str> {
        self.failures.iter().map(|(e, _)| e.as_str()).collect()
    }
}

impl fmt::Display for InventoryFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "inventory fetch failed")?;
        for (i, (endpoint, err)) in self.failures.iter().enumerate() {
            let sep = if i == 0 { ": " } else { "; " };
            write!(f, "{sep}{endpoint}: {err}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Credentials {
    pub auth_url: Url,
    pub username: String,
    pub password: String,
    pub project_name: String,
    pub domain: String,
}

impl Credentials {
    pub fn new(
        auth_url: &str,
        username: impl Into<String>,
        password: impl Into<String>,
        project_name: impl Into<String>,
        domain: impl Into<String>,
    ) -> Result<Self, CloudError> {
        let url = Url::parse(auth_url)
            .map_err(|e| CloudError::Config(format!("auth_url {auth_url:?} is not an absolute URL: {e}")))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(CloudError::Config(format!("auth_url {auth_url:?} must be http or https")));
        }
        Ok(Self {
            auth_url: url,
            username: username.into(),
            password: password.into(),
            project_name: project_name.into(),
            domain: domain.into(),
        })
    }

    fn identity_base(&self) -> String {
        self.auth_url.as_str().trim_end_matches('/').to_owned()
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct AuthToken {
    pub token: String,
    pub expires_at: DateTime<Utc>,
    /// Service type (`compute`, `identity`, ...) to public base URL.
    pub service_catalog: BTreeMap<String, String>,
}

impl fmt::Debug for AuthToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuthToken")
            .field("token", &"<redacted>")
            .field("expires_at", &self.expires_at)
            .field("service_catalog", &self.service_catalog)
            .finish()
    }
}

impl AuthToken {
    pub fn endpoint(&self, service_type: &str) -> Option<&str> {
        self.service_catalog.get(service_type).map(String::as_str)
    }

    pub fn is_expired(&self, now: DateTime<Utc>) -> bool {
        self.expires_at <= now
    }
}

/// Path suffixes appended to the identity and compute base URLs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointPaths {
    pub tokens: String,
    pub projects: String,
    pub servers: String,
    pub hypervisors: String,
    pub flavors: String,
    /// `{id}` is replaced by the instance id.
    pub server_action: String,
}

impl Default for EndpointPaths {
    fn default() -> Self {
        Self {
            tokens: "/auth/tokens".into(),
            projects: "/projects".into(),
            servers: "/servers/detail".into(),
            hypervisors: "/os-hypervisors/detail".into(),
            flavors: "/flavors/detail".into(),
            server_action: "/servers/{id}/action".into(),
        }
    }
}

/// Explicit base URLs that win over the token's service catalog.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceOverrides {
    pub compute: Option<String>,
    pub identity: Option<String>,
    pub power: Option<String>,
}

/// Exponential backoff for transient failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total tries per request, including the first.
    pub attempts: u32,
    pub base_delay: Duration,
    /// No single wait exceeds this; set to the poll interval.
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(100), max_delay: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VmAction {
    Start,
    Stop,
    /// Target compute host name.
    MigrateTo(String),
}

/// The cloud took the request; its effect shows up in a later poll.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accepted;

pub struct CloudClient {
    transport: Box<dyn Transport>,
    clock: Arc<dyn Clock>,
    pub paths: EndpointPaths,
    pub overrides: ServiceOverrides,
    pub retry: RetryPolicy,
}

impl fmt::Debug for CloudClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CloudClient")
            .field("paths", &self.paths)
            .field("overrides", &self.overrides)
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

fn error_message(body: &[u8]) -> String {
    let Ok(v) = serde_json::from_slice::<Value>(body) else {
        return String::from_utf8_lossy(body).chars().take(200).collect();
    };
    // Nova wraps errors as {"badRequest": {"message": ...}}, Keystone as {"error": {...}}
    v.as_object()
        .and_then(|o| o.values().next())
        .and_then(|inner| inner.get("message"))
        .and_then(Value::as_str)
        .map(str::to_owned)
        .unwrap_or_else(|| v.to_string())
}

fn classify(resp: &WireResponse, authed: bool) -> CloudError {
    let message = error_message(&resp.body);
    match resp.status {
        401 if authed => CloudError::TokenExpired,
        401 => CloudError::BadCredentials,
        400 => CloudError::BadRequest(message),
        404 => CloudError::NotFound(message),
        409 => CloudError::Conflict(message),
        s if s >= 500 => CloudError::Transient(format!("HTTP {s}: {message}")),
        status => CloudError::Http { status, message },
    }
}

impl CloudClient {
    pub fn new(transport: impl Transport + 'static, clock: Arc<dyn Clock>) -> Self {
        Self {
            transport: Box::new(transport),
            clock,
            paths: EndpointPaths::default(),
            overrides: ServiceOverrides::default(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Sends `req`, retrying transport failures and 5xx answers. Any other
    /// status is returned to the caller untouched.
    pub(crate) fn send(&self, req: &WireRequest) -> Result<WireResponse, CloudError> {
        let mut retry = 0;
        loop {
            let outcome = self.transport.execute(req.clone());
            let transient = match &outcome {
                Ok(r) => r.status >= 500,
                Err(TransportError::Request(_)) => false,
                Err(_) => true,
            };
            if !transient || retry + 1 >= self.retry.attempts {
                return Ok(outcome?);
            }
            let wait = self.retry.delay(retry);
            tracing::debug!(url = %req.url, retry, ?wait, "transient failure, retrying");
            self.clock.sleep(wait);
            retry += 1;
        }
    }

    /// Sends and requires one of `ok` as the status.
    pub(crate) fn send_expect(
        &self,
        req: &WireRequest,
        ok: &[u16],
        authed: bool,
    ) -> Result<WireResponse, CloudError> {
        let resp = self.send(req)?;
        if ok.contains(&resp.status) {
            Ok(resp)
        } else {
            Err(classify(&resp, authed))
        }
    }

    fn authed(&self, method: &str, url: String, token: &AuthToken) -> WireRequest {
        WireRequest::new(method, url)
            .header("x-auth-token", token.token.clone())
            .header("accept", "application/json")
    }

    fn nova(&self, method: &str, url: String, token: &AuthToken) -> WireRequest {
        self.authed(method, url, token)
            .header("openstack-api-version", format!("compute {NOVA_MICROVERSION}"))
            .header("x-openstack-nova-api-version", NOVA_MICROVERSION)
    }

    fn compute_base(&self, token: &AuthToken) -> Result<String, CloudError> {
        self.overrides
            .compute
            .as_deref()
            .or_else(|| token.endpoint("compute"))
            .map(|s| s.trim_end_matches('/').to_owned())
            .ok_or_else(|| CloudError::Config("no compute endpoint in catalog or config".into()))
    }

    fn identity_base(&self, creds: &Credentials) -> String {
        self.overrides
            .identity
            .as_deref()
            .map(|s| s.trim_end_matches('/').to_owned())
            .unwrap_or_else(|| creds.identity_base())
    }

    pub(crate) fn power_base(&self, token: &AuthToken) -> Result<String, CloudError> {
        self.overrides
            .power
            .as_deref()
            .or_else(|| token.endpoint("power"))
            .map(|s| s.trim_end_matches('/').to_owned())
            .ok_or_else(|| CloudError::Config("no power endpoint in catalog or config".into()))
    }

    /// Password authentication scoped to the configured project.
    pub fn authenticate(&self, creds: &Credentials) -> Result<AuthToken, CloudError> {
        let body = json!({ "auth": {
            "identity": {
                "methods": ["password"],
                "password": { "user": {
                    "name": creds.username,
                    "domain": { "name": creds.domain },
                    "password": creds.password,
                }},
            },
            "scope": { "project": {
                "name": creds.project_name,
                "domain": { "name": creds.domain },
            }},
        }});
        let url = format!("{}{}", self.identity_base(creds), self.paths.tokens);
        let req = WireRequest::new("POST", url).json_body(&body);
        let resp = self.send_expect(&req, &[200, 201], false)?;
        let token = nova::parse_token(&resp)?;
        if token.is_expired(self.clock.now()) {
            return Err(CloudError::Decode {
                what: "token".into(),
                message: "token is already expired at issuance".into(),
            });
        }
        Ok(token)
    }

    /// Reads servers, hypervisors, flavours and projects into one snapshot.
    ///
    /// All four lists are requested even if one fails so the error names
    /// every broken endpoint. The result is validated; an inconsistent
    /// inventory is an error rather than a partial snapshot.
    pub fn fetch_inventory(
        &self,
        token: &AuthToken,
        creds: &Credentials,
        poll_seq: u64,
    ) -> Result<CloudState, CloudError> {
        let compute = self.compute_base(token)?;
        let identity = self.identity_base(creds);
        let get = |name: &'static str, req: WireRequest| -> (&'static str, Result<Value, CloudError>) {
            let res = self.send_expect(&req, &[200], true).and_then(|r| {
                serde_json::from_slice(&r.body)
                    .map_err(|e| CloudError::Decode { what: name.into(), message: e.to_string() })
            });
            (name, res)
        };
        let results = [
            get("servers", self.nova("GET", format!("{compute}{}", self.paths.servers), token)),
            get("hypervisors", self.nova("GET", format!("{compute}{}", self.paths.hypervisors), token)),
            get("flavors", self.nova("GET", format!("{compute}{}", self.paths.flavors), token)),
            get("projects", self.authed("GET", format!("{identity}{}", self.paths.projects), token)),
        ];
        if results.iter().any(|(_, r)| matches!(r, Err(CloudError::TokenExpired))) {
            return Err(CloudError::TokenExpired);
        }
        let mut docs = BTreeMap::new();
        let mut failures = Vec::new();
        for (name, res) in results {
            match res {
                Ok(v) => {
                    docs.insert(name, v);
                }
                Err(e) => failures.push((name.to_owned(), e)),
            }
        }
        if !failures.is_empty() {
            return Err(CloudError::Inventory(InventoryFailure { failures }));
        }
        let mut state = nova::assemble(
            &docs["servers"],
            &docs["hypervisors"],
            &docs["flavors"],
            &docs["projects"],
            poll_seq,
            self.clock.now(),
        )?;
        state.canonicalise();
        let report = validate(&state);
        if !report.is_valid() {
            return Err(CloudError::Inconsistent(report));
        }
        Ok(state)
    }

    /// Asks Nova to start, stop or move an instance.
    ///
    /// A move is tried as a live migration to the named host first; if Nova
    /// rejects that with 400 the same target is retried as a cold migration.
    pub fn send_vm_action(
        &self,
        token: &AuthToken,
        instance: &InstanceId,
        action: &VmAction,
    ) -> Result<Accepted, CloudError> {
        let compute = self.compute_base(token)?;
        let path = self.paths.server_action.replace("{id}", instance.as_str());
        let url = format!("{compute}{path}");
        let post = |body: Value| {
            let req = self.nova("POST", url.clone(), token).json_body(&body);
            self.send_expect(&req, &[200, 202, 204], true).map(|_| Accepted)
        };
        match action {
            VmAction::Start => post(json!({ "os-start": null })),
            VmAction::Stop => post(json!({ "os-stop": null })),
            VmAction::MigrateTo(host) => {
                match post(json!({ "os-migrateLive": { "host": host, "block_migration": "auto" } })) {
                    Err(CloudError::BadRequest(reason)) => {
                        tracing::info!(instance = %instance, %host, %reason, "live migration refused, trying cold migration");
                        post(json!({ "migrate": { "host": host } }))
                    }
                    other => other,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_up_to_cap() {
        let p = RetryPolicy {
            attempts: 6,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(500),
        };
        let d: Vec<u128> = (0..5).map(|i| p.delay(i).as_millis()).collect();
        assert_eq!(d, vec![100, 200, 400, 500, 500]);
    }

    #[test]
    fn relative_auth_url_is_rejected() {
        assert!(matches!(
            Credentials::new("/identity/v3", "u", "p", "proj", "Default"),
            Err(CloudError::Config(_))
        ));
        assert!(Credentials::new("http://keystone:5000/v3", "u", "p", "proj", "Default").is_ok());
    }

    #[test]
    fn error_bodies_are_summarised() {
        let r = WireResponse::json(409, &json!({ "conflictingRequest": { "code": 409, "message": "busy" } }));
        assert_eq!(classify(&r, true), CloudError::Conflict("busy".into()));
        let r = WireResponse::json(401, &json!({ "error": { "code": 401, "message": "nope" } }));
        assert_eq!(classify(&r, false), CloudError::BadCredentials);
        assert_eq!(classify(&r, true), CloudError::TokenExpired);
        assert!(classify(&WireResponse::new(503), true).is_transient());
        assert!(!classify(&WireResponse::new(403), true).is_transient());
    }

    #[test]
    fn token_debug_hides_secret() {
        let t = AuthToken {
            token: "gAAAAAsecret".into(),
            expires_at: Utc::now(),
            service_catalog: BTreeMap::new(),
        };
        assert!(!format!("{t:?}").contains("secret"));
    }
}
