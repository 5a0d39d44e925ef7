//! A fixed request/clock script against the mock, rendered as text.

use chrono::Duration;
use serde_json::json;
use twin_core::wire::WireRequest;
use twin_mock::trace::render_exchange;
use twin_mock::{Endpoint, FaultBehaviour, FaultRule, MockConfig, MockReply, MockWorld, IN_PROCESS_BASE};

pub const GOLDEN_TRACE: &str = include_str!("../golden/mock_trace.txt");

pub const WEB_FRONTEND: &str = "3f2a6c1e-8d4b-4e0a-9c57-1b2e3d4f5a61";
pub const BATCH_WORKER: &str = "8c9d0e1f-2a3b-4c5d-8e6f-7a8b9c0d1e22";
pub const DB_PRIMARY: &str = "c4b3a291-7e6d-4f5c-b4a3-92817e6d5c33";

pub fn auth_body(password: &str) -> serde_json::Value {
    json!({ "auth": {
        "identity": { "methods": ["password"], "password": { "user": {
            "name": "admin", "password": password, "domain": { "name": "Default" }
        }}},
        "scope": { "project": { "name": "admin", "domain": { "name": "Default" } } }
    }})
}

fn url(path: &str) -> String {
    format!("{IN_PROCESS_BASE}{path}")
}

/// Runs the scripted trace on a fresh F1 world and renders every exchange.
pub fn run_golden_script() -> String {
    let config = MockConfig {
        token_ttl: 5.0,
        faults: vec![FaultRule {
            endpoint: Endpoint::Hypervisors,
            behaviour: FaultBehaviour::Status(500),
            count: Some(1),
        }],
        ..MockConfig::default()
    };
    let mut world: MockWorld = twin_mock::f1_world(config);
    let mut out = String::new();
    let mut at = world.now();

    let mut send = |world: &mut MockWorld, at, req: WireRequest| -> MockReply {
        let reply = world.handle_request(&req, at);
        out.push_str(&render_exchange(at, &req, &reply));
        reply
    };

    send(&mut world, at, WireRequest::new("POST", url("/identity/v3/auth/tokens")).json_body(&auth_body("wrong")));
    let reply = send(
        &mut world,
        at,
        WireRequest::new("POST", url("/identity/v3/auth/tokens")).json_body(&auth_body("secret")),
    );
    let token = reply
        .response()
        .and_then(|r| r.get_header("x-subject-token"))
        .expect("token issued")
        .to_owned();
    let get = |path: &str| WireRequest::new("GET", url(path)).header("X-Auth-Token", token.clone());
    let post = |path: &str, body: serde_json::Value| {
        WireRequest::new("POST", url(path)).header("X-Auth-Token", token.clone()).json_body(&body)
    };

    send(&mut world, at, WireRequest::new("GET", url("/compute/v2.1/servers/detail")));
    send(&mut world, at, get("/compute/v2.1/os-hypervisors/detail"));
    send(&mut world, at, get("/compute/v2.1/os-hypervisors/detail"));
    send(&mut world, at, get("/compute/v2.1/flavors/detail"));
    send(&mut world, at, get("/identity/v3/projects"));
    send(&mut world, at, get("/pdu/metering"));
    send(&mut world, at, post(&format!("/compute/v2.1/servers/{WEB_FRONTEND}/action"), json!({ "os-start": null })));
    send(&mut world, at, post(&format!("/compute/v2.1/servers/{WEB_FRONTEND}/action"), json!({ "os-stop": null })));
    send(
        &mut world,
        at,
        post(&format!("/compute/v2.1/servers/{DB_PRIMARY}/action"), json!({ "os-migrateLive": { "host": "compute-01", "block_migration": "auto" } })),
    );
    at += Duration::seconds(1);
    send(&mut world, at, get("/compute/v2.1/servers/detail"));
    at += Duration::seconds(1);
    send(&mut world, at, get("/compute/v2.1/servers/detail"));
    at += Duration::seconds(1);
    send(&mut world, at, get("/compute/v2.1/servers/detail"));
    send(&mut world, at, post("/power/hypervisors/2", json!({ "action": "off" })));
    at += Duration::seconds(2);
    send(&mut world, at, get("/compute/v2.1/os-hypervisors/detail"));
    send(&mut world, at, get("/pdu/metering"));
    at += Duration::seconds(1);
    send(&mut world, at, get("/compute/v2.1/servers/detail"));
    out
}
