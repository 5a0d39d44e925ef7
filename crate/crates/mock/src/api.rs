//! HTTP surface of the mock: routing, auth and the JSON wire shapes.

use chrono::{DateTime, Utc};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use twin_core::timefmt;
use twin_core::wire::{WireRequest, WireResponse};
use twin_core::{HostState, Hypervisor, InstanceStatus, VmInstance};

use crate::config::{Endpoint, FaultBehaviour};
use crate::world::{seconds, MockReply, MockWorld, TransitionKind};

pub const IDENTITY_PREFIX: &str = "/identity/v3";
pub const COMPUTE_PREFIX: &str = "/compute/v2.1";
pub const POWER_PREFIX: &str = "/power";
pub const PDU_PREFIX: &str = "/pdu";

fn nova_error(status: u16, key: &str, message: impl Into<String>) -> WireResponse {
    WireResponse::json(status, &json!({ key: { "code": status, "message": message.into() } }))
}

fn bad_request(message: impl Into<String>) -> WireResponse {
    nova_error(400, "badRequest", message)
}

fn not_found(message: impl Into<String>) -> WireResponse {
    nova_error(404, "itemNotFound", message)
}

fn conflict(message: impl Into<String>) -> WireResponse {
    nova_error(409, "conflictingRequest", message)
}

fn unauthorized() -> WireResponse {
    WireResponse::json(
        401,
        &json!({ "error": {
            "code": 401,
            "message": "The request you have made requires authentication.",
            "title": "Unauthorized",
        }}),
    )
}

fn accepted() -> WireResponse {
    WireResponse::new(202)
}

enum Route {
    Tokens,
    Projects,
    Servers,
    Hypervisors,
    Flavors,
    ServerAction(String),
    HostPower(String),
    OutletPower(String),
    Metering,
    Unknown,
}

fn route(method: &str, path: &str) -> Route {
    let path = path.trim_end_matches('/');
    let segs: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
    match (method, segs.as_slice()) {
        ("POST", ["identity", "v3", "auth", "tokens"]) => Route::Tokens,
        ("GET", ["identity", "v3", "projects"]) => Route::Projects,
        ("GET", ["compute", "v2.1", "servers", "detail"]) => Route::Servers,
        ("GET", ["compute", "v2.1", "os-hypervisors", "detail"]) => Route::Hypervisors,
        ("GET", ["compute", "v2.1", "flavors", "detail"]) => Route::Flavors,
        ("POST", ["compute", "v2.1", "servers", id, "action"]) => Route::ServerAction((*id).to_owned()),
        ("POST", ["power", "hypervisors", id]) => Route::HostPower((*id).to_owned()),
        ("POST", ["pdu", "outlets", name, "power"]) => Route::OutletPower((*name).to_owned()),
        ("GET", ["pdu", "metering"]) => Route::Metering,
        _ => Route::Unknown,
    }
}

pub(crate) fn server_json(vm: &VmInstance, world: &MockWorld) -> Value {
    let host = vm
        .hypervisor_id
        .as_ref()
        .and_then(|h| world.state.hypervisor(h))
        .map(|h| h.hostname.clone());
    let task_state = world.transitions.get(vm.id.as_str()).map(|t| match t.kind {
        TransitionKind::PowerOff => "powering-off",
        TransitionKind::PowerOn => "powering-on",
        TransitionKind::LiveMigrate { .. } => "migrating",
        TransitionKind::ColdMigrate { .. } => "resize_migrating",
        TransitionKind::HostOff | TransitionKind::HostOn => "none",
    });
    json!({
        "id": vm.id,
        "name": vm.name,
        "status": vm.status.as_nova(),
        "tenant_id": vm.project_id,
        "flavor": { "id": vm.flavour_id },
        "OS-EXT-SRV-ATTR:host": host,
        "OS-EXT-SRV-ATTR:hypervisor_hostname": host,
        "OS-EXT-STS:task_state": task_state,
    })
}

pub(crate) fn hypervisor_json(h: &Hypervisor) -> Value {
    let state = match h.state {
        HostState::Up => "up",
        HostState::Down => "down",
        HostState::Transitioning => "transitioning",
    };
    json!({
        "id": h.id,
        "hypervisor_hostname": h.hostname,
        "vcpus": h.vcpus_total,
        "state": state,
        "status": "enabled",
        "service": { "host": h.hostname },
    })
}

impl MockWorld {
    /// Serves one request at instant `now`.
    ///
    /// The clock first advances to `now`, completing due transitions, so a
    /// response always reflects every transition that finished by then.
    pub fn handle_request(&mut self, req: &WireRequest, now: DateTime<Utc>) -> MockReply {
        self.advance_to(now);
        let Ok(url) = req.parsed_url() else {
            return MockReply::Response(bad_request("malformed url"));
        };
        let base = match url.port() {
            Some(p) => format!("{}://{}:{p}", url.scheme(), url.host_str().unwrap_or("localhost")),
            None => format!("{}://{}", url.scheme(), url.host_str().unwrap_or("localhost")),
        };
        let route = route(&req.method, url.path());
        let body: Value = if req.body.is_empty() {
            Value::Null
        } else {
            match serde_json::from_slice(&req.body) {
                Ok(v) => v,
                Err(_) => return MockReply::Response(bad_request("body is not JSON")),
            }
        };

        let endpoints: &[Endpoint] = match &route {
            Route::Tokens => &[Endpoint::Auth],
            Route::Projects => &[Endpoint::Projects],
            Route::Servers => &[Endpoint::Servers],
            Route::Hypervisors => &[Endpoint::Hypervisors],
            Route::Flavors => &[Endpoint::Flavors],
            Route::ServerAction(_) if body.get("os-migrateLive").is_some() => {
                &[Endpoint::LiveMigrate, Endpoint::ServerAction]
            }
            Route::ServerAction(_) => &[Endpoint::ServerAction],
            Route::HostPower(_) | Route::OutletPower(_) => &[Endpoint::HostPower],
            Route::Metering => &[Endpoint::Metering],
            Route::Unknown => &[],
        };
        let is_action = matches!(
            route,
            Route::ServerAction(_) | Route::HostPower(_) | Route::OutletPower(_)
        );
        let mut dropped = false;
        match self.take_fault(endpoints) {
            Some(FaultBehaviour::Status(code)) => {
                return MockReply::Response(WireResponse::json(
                    code,
                    &json!({ "error": { "code": code, "message": "injected fault" } }),
                ))
            }
            Some(FaultBehaviour::Timeout) => return MockReply::Timeout,
            Some(FaultBehaviour::Drop) if !is_action => return MockReply::Timeout,
            Some(FaultBehaviour::Drop) => dropped = true,
            None => {}
        }

        let needs_token = !matches!(
            route,
            Route::Tokens | Route::OutletPower(_) | Route::Metering | Route::Unknown
        );
        if needs_token && !self.token_valid(req.get_header("x-auth-token")) {
            return MockReply::Response(unauthorized());
        }

        let resp = match route {
            Route::Tokens => self.issue_token(&body, &base),
            Route::Projects => WireResponse::json(
                200,
                &json!({ "projects": self.state.projects.iter().map(|p| json!({
                    "id": p.id, "name": p.name, "domain_id": "default", "enabled": true,
                })).collect::<Vec<_>>() }),
            ),
            Route::Servers => WireResponse::json(
                200,
                &json!({ "servers": self.state.instances.iter().map(|vm| server_json(vm, self)).collect::<Vec<_>>() }),
            ),
            Route::Hypervisors => WireResponse::json(
                200,
                &json!({ "hypervisors": self.state.hypervisors.iter().map(hypervisor_json).collect::<Vec<_>>() }),
            ),
            Route::Flavors => WireResponse::json(
                200,
                &json!({ "flavors": self.state.flavours.iter().map(|f| json!({
                    "id": f.id, "name": f.name, "vcpus": f.vcpus, "ram": f.ram_mb, "disk": f.disk_gb,
                })).collect::<Vec<_>>() }),
            ),
            Route::ServerAction(id) => self.server_action(&id, &body, dropped),
            Route::HostPower(id) => match body.get("action").and_then(Value::as_str) {
                Some("on") => self.host_power(&id, true, dropped),
                Some("off") => self.host_power(&id, false, dropped),
                _ => bad_request("expected {\"action\": \"on\" | \"off\"}"),
            },
            Route::OutletPower(name) => self.outlet_power(&name, &body, dropped),
            Route::Metering => WireResponse::json(
                200,
                &json!({ "outlets": self.outlet_watts().into_iter().map(|(name, watts)| json!({
                    "name": name, "watts": watts,
                })).collect::<Vec<_>>() }),
            ),
            Route::Unknown => not_found(format!("no route for {} {}", req.method, url.path())),
        };
        MockReply::Response(resp)
    }

    fn token_valid(&self, token: Option<&str>) -> bool {
        token
            .and_then(|t| self.tokens.get(t))
            .is_some_and(|expires| *expires > self.now)
    }

    fn issue_token(&mut self, body: &Value, base: &str) -> WireResponse {
        let ident = &body["auth"]["identity"];
        let user = &ident["password"]["user"];
        let scope = &body["auth"]["scope"]["project"];
        let creds = &self.config.credentials;
        let domain_ok = |v: &Value| {
            v["name"].as_str() == Some(creds.domain.as_str())
                || v["id"].as_str().is_some_and(|id| id.eq_ignore_ascii_case(&creds.domain))
        };
        let ok = user["name"].as_str() == Some(creds.username.as_str())
            && user["password"].as_str() == Some(creds.password.as_str())
            && domain_ok(&user["domain"])
            && scope["name"].as_str() == Some(creds.project_name.as_str());
        if !ok {
            return unauthorized();
        }

        self.tokens_issued += 1;
        let digest = Sha256::digest(format!("{}:{}", self.tokens_issued, creds.username).as_bytes());
        let token: String = digest.iter().take(16).map(|b| format!("{b:02x}")).collect();
        let token = format!("gAAAAA{token}");
        let expires_at = self.now + seconds(self.config.token_ttl);
        self.tokens.insert(token.clone(), expires_at);

        let endpoint = |url: String| json!([{ "interface": "public", "region": "RegionOne", "url": url }]);
        let body = json!({ "token": {
            "methods": ["password"],
            "issued_at": timefmt::format(&self.now),
            "expires_at": timefmt::format(&expires_at),
            "user": { "name": creds.username, "domain": { "name": creds.domain } },
            "project": { "name": creds.project_name, "domain": { "name": creds.domain } },
            "catalog": [
                { "type": "identity", "name": "keystone", "endpoints": endpoint(format!("{base}{IDENTITY_PREFIX}")) },
                { "type": "compute", "name": "nova", "endpoints": endpoint(format!("{base}{COMPUTE_PREFIX}")) },
                { "type": "power", "name": "twin-mock-power", "endpoints": endpoint(format!("{base}{POWER_PREFIX}")) },
                { "type": "metering", "name": "epdu", "endpoints": endpoint(format!("{base}{PDU_PREFIX}")) },
            ],
        }});
        WireResponse::json(201, &body).header("x-subject-token", token)
    }

    fn server_action(&mut self, id: &str, body: &Value, dropped: bool) -> WireResponse {
        let Some(vm) = self.state.instances.iter().find(|i| i.id.as_str() == id).cloned() else {
            return not_found(format!("Instance {id} could not be found."));
        };
        let Some(action) = body.as_object().and_then(|o| o.keys().next().cloned()) else {
            return bad_request("empty action body");
        };
        if self.transitions.contains_key(id) {
            return conflict(format!("Cannot '{action}' instance {id} while a task is in progress"));
        }
        let delay_power = self.config.transition_delay_power;
        let delay_migrate = self.config.transition_delay_migrate;
        match action.as_str() {
            "os-stop" => {
                if vm.status != InstanceStatus::Active {
                    return conflict(format!("Cannot 'stop' instance {id} while it is in vm_state {}", vm.status.as_nova()));
                }
                if !dropped {
                    self.schedule(id, TransitionKind::PowerOff, delay_power);
                }
                accepted()
            }
            "os-start" => {
                if vm.status != InstanceStatus::Shutoff {
                    return conflict(format!("Cannot 'start' instance {id} while it is in vm_state {}", vm.status.as_nova()));
                }
                if let Some(h) = vm.hypervisor_id.as_ref().and_then(|h| self.state.hypervisor(h)) {
                    if h.state != HostState::Up {
                        return conflict(format!("Compute host {} is not up", h.hostname));
                    }
                }
                if !dropped {
                    self.schedule(id, TransitionKind::PowerOn, delay_power);
                }
                accepted()
            }
            "os-migrateLive" | "migrate" => {
                let live = action == "os-migrateLive";
                let Some(host_name) = body[&action]["host"].as_str() else {
                    return bad_request("a target host is required");
                };
                let Some(target) = self.state.hypervisor_by_hostname(host_name).cloned() else {
                    return bad_request(format!("Compute host {host_name} could not be found."));
                };
                if vm.hypervisor_id.as_ref() == Some(&target.id) {
                    return bad_request(format!("Instance {id} is already on host {host_name}"));
                }
                if target.state != HostState::Up || self.transitions.contains_key(target.id.as_str()) {
                    return bad_request(format!("Compute service of {host_name} is unavailable at this time."));
                }
                let movable = if live {
                    vm.status == InstanceStatus::Active
                } else {
                    matches!(vm.status, InstanceStatus::Active | InstanceStatus::Shutoff)
                };
                if !movable {
                    return conflict(format!("Cannot '{action}' instance {id} while it is in vm_state {}", vm.status.as_nova()));
                }
                let resume = vm.status;
                if let Some(v) = self.state.instances.iter_mut().find(|i| i.id.as_str() == id) {
                    v.status = InstanceStatus::Migrating;
                }
                if !dropped {
                    let kind = if live {
                        TransitionKind::LiveMigrate { target: target.id }
                    } else {
                        TransitionKind::ColdMigrate { target: target.id, resume }
                    };
                    self.schedule(id, kind, delay_migrate);
                }
                accepted()
            }
            other => bad_request(format!("unsupported action {other}")),
        }
    }

    fn host_power(&mut self, id: &str, on: bool, dropped: bool) -> WireResponse {
        let Some(host) = self.state.hypervisors.iter().find(|h| h.id.as_str() == id).cloned() else {
            return not_found(format!("Hypervisor {id} could not be found."));
        };
        let wanted = if on { HostState::Up } else { HostState::Down };
        if host.state == wanted {
            return conflict(format!("Hypervisor {id} is already {wanted:?}"));
        }
        if host.state == HostState::Transitioning || self.transitions.contains_key(id) {
            return conflict(format!("Hypervisor {id} is changing power state"));
        }
        let busy = self.transitions.iter().any(|(subject, t)| {
            let on_host = self
                .state
                .instance(&subject.as_str().into())
                .is_some_and(|vm| vm.hypervisor_id.as_ref() == Some(&host.id));
            let targets_host = matches!(&t.kind,
                TransitionKind::LiveMigrate { target } | TransitionKind::ColdMigrate { target, .. }
                    if target == &host.id);
            on_host || targets_host
        });
        if busy {
            return conflict(format!("Hypervisor {id} has instance operations in progress"));
        }
        if let Some(h) = self.state.hypervisors.iter_mut().find(|h| h.id.as_str() == id) {
            h.state = HostState::Transitioning;
        }
        if !dropped {
            let kind = if on { TransitionKind::HostOn } else { TransitionKind::HostOff };
            self.schedule(id, kind, self.config.transition_delay_power);
        }
        accepted()
    }

    fn outlet_power(&mut self, name: &str, body: &Value, dropped: bool) -> WireResponse {
        let Some(outlet) = self.metering.outlets.iter().find(|o| o.name == name).cloned() else {
            return not_found(format!("outlet {name} does not exist"));
        };
        let on = match body.get("state").and_then(Value::as_str) {
            Some("on") => true,
            Some("off") => false,
            _ => return bad_request("expected {\"state\": \"on\" | \"off\"}"),
        };
        match outlet.hypervisor_id {
            Some(h) => self.host_power(h.as_str(), on, dropped),
            None => accepted(),
        }
    }
}
