use std::path::PathBuf;

use serde_json::Value;
use twin_service::{replay, Scenario, ScenarioError};

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    Scenario::load(&path).unwrap()
}

fn lines(s: &Scenario) -> Vec<Value> {
    replay(s).unwrap().transcript().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn shape(v: &Value) -> String {
    match v["type"].as_str().unwrap() {
        "cloud" => format!("cloud:{}", v["kind"].as_str().unwrap()),
        other => other.to_owned(),
    }
}

#[test]
fn stop_transcript() {
    let t = lines(&scenario("stop_web_frontend.json"));
    let shapes: Vec<String> = t.iter().map(shape).collect();
    assert_eq!(shapes, ["op_accepted", "cloud:PowerChanged", "op_retired"]);
    assert_eq!(t[0]["at"], "2024-05-01T09:00:00.500Z");
    // the mock takes 2 s, observed on the next whole-second poll
    assert_eq!(t[1]["at"], "2024-05-01T09:00:03.000Z");
    assert_eq!(t[1]["after"]["status"], "Shutoff");
    assert_eq!(t[2]["op"]["op_id"], t[0]["op"]["op_id"]);
    let seqs: Vec<u64> = t.iter().map(|v| v["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, [1, 2, 3]);
}

#[test]
fn outage_goes_stale_and_recovers() {
    let s = scenario("hypervisor_outage.json");
    let out = replay(&s).unwrap();
    let t: Vec<Value> = out.transcript().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let shapes: Vec<String> = t.iter().map(shape).collect();
    assert_eq!(
        shapes,
        [
            "fetch_failed",
            "fetch_failed",
            "fetch_failed",
            "stale_changed",
            "fetch_failed",
            "fetch_failed",
            "stale_changed",
        ]
    );
    assert_eq!(t[3]["stale"], true);
    assert_eq!(t[3]["at"], "2024-05-01T09:00:03.000Z");
    assert_eq!(t[6]["stale"], false);
    assert!(t[0]["error"].as_str().unwrap().contains("hypervisors"));

    // the last good scene is kept, flagged stale, while fetches fail
    let at3 = out.ticks.iter().find(|t| t.at_ms == 3000).unwrap();
    let scene = at3.scene.as_ref().unwrap();
    assert!(scene.stale);
    assert_eq!(scene.scene.at_seq, 1);
}

#[test]
fn migrations_land_or_time_out() {
    let t = lines(&scenario("migrate_and_drop.json"));
    let shapes: Vec<String> = t.iter().map(shape).collect();
    assert_eq!(
        shapes,
        [
            "op_accepted",
            "command_rejected",
            "cloud:PowerChanged",
            "cloud:PowerChanged",
            "cloud:Migrated",
            "op_retired",
            "op_accepted",
            "cloud:PowerChanged",
            "op_timed_out",
        ],
        "{t:#?}"
    );
    assert_eq!(t[1]["error"], "busy");
    assert_eq!(t[4]["after"]["host"], "2");
    assert_eq!(t[8]["at"], "2024-05-01T09:00:12.000Z");
}

#[test]
fn replays_are_deterministic() {
    for name in ["stop_web_frontend.json", "hypervisor_outage.json", "migrate_and_drop.json"] {
        let s = scenario(name);
        assert_eq!(replay(&s).unwrap().transcript(), replay(&s).unwrap().transcript(), "{name}");
    }
}

#[test]
fn bad_scenarios_are_refused() {
    assert!(matches!(Scenario::parse("[1, 2]"), Err(ScenarioError::Parse(_))));
    let missing = r#"{ "name": "x", "settings": { "mock": { "fixture": "/nonexistent/f.json" } } }"#;
    assert!(replay(&Scenario::parse(missing).unwrap()).is_err());
    assert!(matches!(
        Scenario::load(std::path::Path::new("/nonexistent/scenario.json")),
        Err(ScenarioError::Io(_))
    ));
}
