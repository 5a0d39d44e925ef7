//! One line per acceptance criterion; exits non-zero if any fails.

mod common;

use std::cell::Cell;
use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use serde_json::{json, Value};
use twin_core::layout::{build_scene, energy_shade, footprint, grid_dimensions, LayoutConfig, SceneSnapshot};
use twin_core::{
    CloudState, EnergyReading, EventKind, EventValue, FlavourSpec, HostState, HypervisorId, InstanceId,
    InstanceStatus, VmInstance,
};
use twin_mock::{Endpoint, FaultBehaviour, FaultRule};
use twin_service::driver::{apply_command, publish_tick, Driver, TickMode};
use twin_service::gateway::{router, GatewayConfig};
use twin_service::reconciler::ReconcilerPolicy;
use twin_service::scenario::{Action, ReplaySettings, Step};
use twin_service::{replay, CommandKind, Hub, Scenario, TwinEvent};
use twin_testkit::oracle::{check_rows, Rect};

/// Relative slack for volume = RAM/512, which divides then multiplies.
const VOLUME_REL_TOL: f64 = 1e-12;

type Check = fn() -> Result<String, String>;

fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scene_of(state: &CloudState, readings: &[EnergyReading]) -> SceneSnapshot {
    build_scene(state, readings, &[], &LayoutConfig::default()).expect("valid state lays out")
}

fn plate_geometry() -> Result<String, String> {
    ensure(grid_dimensions(32) == (8, 4), || format!("32 cells gave {:?}", grid_dimensions(32)))?;

    // through the running service, against the sample cluster
    let rig = Rig::f1();
    let mut r = rig.reconciler(ReconcilerPolicy::default());
    let scene = r.tick().scene.ok_or("first poll failed")?;
    for p in &scene.plates {
        ensure((p.vcpus_total, p.width_x, p.depth_z) == (32, 8, 4), || format!("plate {p:?}"))?;
    }

    runner(256)
        .run(&twin_testkit::valid_state(), |mut s| {
            for h in s.hypervisors.iter_mut().step_by(2) {
                h.vcpus_total = 32;
            }
            for p in scene_of(&s, &[]).plates {
                prop_assert_eq!(p.width_x * p.depth_z, p.vcpus_total);
                if p.vcpus_total == 32 {
                    prop_assert_eq!((p.width_x, p.depth_z), (8, 4));
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{} service plates 8x4 (32 cells), 256 random states", scene.plates.len()))
}

fn flavour_geometry() -> Result<String, String> {
    let want = [(1, 1, 1.0), (1, 1, 4.0), (2, 1, 4.0), (2, 2, 4.0), (4, 2, 4.0)];
    let got: Vec<(u32, u32, f64)> = FlavourSpec::openstack_defaults()
        .iter()
        .map(|f| {
            let fp = footprint(f);
            (fp.width_x, fp.depth_z, fp.height_y)
        })
        .collect();
    ensure(got == want, || format!("stock flavours gave {got:?}"))?;

    // heights are floored, so RAM stays above that floor here
    let flavours = (1u32..=64).prop_flat_map(|v| (Just(v), v as u64..=v as u64 * 64));
    runner(1000)
        .run(&flavours, |(vcpus, ram_units)| {
            let ram_mb = ram_units * 128;
            let f = FlavourSpec { id: "f".into(), name: "f".into(), vcpus, ram_mb, disk_gb: 0 };
            let fp = footprint(&f);
            prop_assert_eq!(fp.area(), vcpus);
            let want = ram_mb as f64 / 512.0;
            prop_assert!(((fp.volume() - want) / want).abs() <= VOLUME_REL_TOL, "{:?} vs {}", fp, want);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("stock table exact, 1000 random flavours (volume rel tol {VOLUME_REL_TOL:e})"))
}

fn placement() -> Result<String, String> {
    let boxes = Cell::new(0usize);
    let over = Cell::new(0usize);
    runner(500)
        .run(&twin_testkit::valid_state(), |s| {
            let scene = scene_of(&s, &[]);
            let again = scene_of(&s, &[]).to_canonical_json();
            prop_assert_eq!(scene.to_canonical_json(), again);
            let mut shuffled = s.clone();
            shuffled.instances.reverse();
            shuffled.hypervisors.reverse();
            prop_assert_eq!(scene.to_canonical_json(), scene_of(&shuffled, &[]).to_canonical_json());

            for p in &scene.plates {
                let rects: Vec<Rect> = scene
                    .boxes_on(&p.hypervisor_id)
                    .map(|b| Rect {
                        id: b.instance_id.to_string(),
                        w: b.width_x,
                        d: b.depth_z,
                        x: b.pos_x,
                        z: b.pos_z,
                    })
                    .collect();
                if let Err(e) = check_rows(p.width_x, p.depth_z, &rects, p.overcommitted) {
                    return Err(TestCaseError::fail(format!("plate {}: {e}", p.hypervisor_id)));
                }
                boxes.set(boxes.get() + rects.len());
                over.set(over.get() + p.overcommitted as usize);
            }
            // every hosted instance is either drawn or listed as too wide
            for vm in &s.instances {
                let drawn = scene.find_box(&vm.id).is_some();
                let listed = scene.unplaced.contains(&vm.id);
                prop_assert!(drawn != listed, "{} drawn={} unplaced={}", vm.id, drawn, listed);
                let plate = vm.hypervisor_id.as_ref().and_then(|h| scene.plate(h));
                let fits = plate.is_some_and(|p| footprint(s.flavour(&vm.flavour_id).unwrap()).width_x <= p.width_x);
                prop_assert_eq!(drawn, fits);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "500 random sets, {} boxes checked by brute force, {} overcommitted plates",
        boxes.get(),
        over.get()
    ))
}

/// What a viewer would see of `subject` after each publication.
#[derive(Debug, PartialEq)]
struct Frame {
    events: Vec<String>,
    blinking: bool,
    translucent: bool,
}

fn stop_loop_frames() -> Vec<Frame> {
    let rig = Rig::f1();
    let hub = Hub::new(1000);
    let mut r = rig.reconciler(ReconcilerPolicy::default());
    let id = InstanceId::new(WEB_FRONTEND);
    let mut frames = Vec::new();
    let mut record = |hub: &Hub, from: u64| {
        let scene = hub.scene().unwrap();
        let b = scene.scene.find_box(&id).unwrap();
        let events = hub.subscribe(Some(from)).backlog.iter().map(|e| e.event.type_name().to_owned()).collect();
        frames.push(Frame { events, blinking: b.is_blinking, translucent: b.translucent });
    };
    let report = r.tick();
    publish_tick(&hub, &r, &report);
    record(&hub, 0);
    rig.advance(0.5);
    let head = hub.head();
    apply_command(&hub, &mut r, &cmd(CommandKind::Stop, WEB_FRONTEND)).unwrap();
    record(&hub, head);
    rig.advance(0.5);
    for _ in 0..6 {
        let head = hub.head();
        let report = r.tick();
        publish_tick(&hub, &r, &report);
        record(&hub, head);
        rig.advance(1.0);
    }
    frames
}

fn bidirectional_loop() -> Result<String, String> {
    let frames = stop_loop_frames();
    ensure(frames == stop_loop_frames(), || "two runs differ".into())?;
    ensure(!frames[0].blinking && !frames[0].translucent, || format!("before: {:?}", frames[0]))?;
    ensure(frames[1].events == ["op_accepted"] && frames[1].blinking, || format!("accept: {:?}", frames[1]))?;
    let retired = frames
        .iter()
        .position(|f| f.events.iter().any(|e| e == "op_retired"))
        .ok_or("never retired")?;
    let ticks = retired - 1;
    ensure(ticks <= 4, || format!("took {ticks} ticks"))?;
    for (k, f) in frames.iter().enumerate() {
        let want_blink = (1..retired).contains(&k);
        ensure(f.blinking == want_blink, || format!("frame {k} blinking={} ({f:?})", f.blinking))?;
        ensure(f.translucent == (k >= retired), || format!("frame {k} translucent={}", f.translucent))?;
    }
    ensure(frames[retired].events == ["cloud", "op_retired"], || format!("{:?}", frames[retired]))?;
    Ok(format!("translucent after {ticks} ticks, blinking in exactly frames 1..{retired}, deterministic"))
}

fn migration_end_to_end() -> Result<String, String> {
    let rig = Rig::f1();
    let driver =
        Driver::spawn(rig.reconciler(ReconcilerPolicy::default()), Arc::new(Hub::new(1000)), TickMode::Manual);
    let service = driver.handle();
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).map_err(|e| e.to_string())?;
    let base = format!("http://{}", listener.local_addr().unwrap());
    let app = router(service.clone(), GatewayConfig::default());
    rt.spawn(async move { axum::serve(listener, app).await });
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(5)))
        .build()
        .into();
    let scene = || -> Result<Value, String> {
        let mut resp = agent.get(format!("{base}/scene")).call().map_err(|e| e.to_string())?;
        serde_json::from_str(&resp.body_mut().read_to_string().map_err(|e| e.to_string())?).map_err(|e| e.to_string())
    };
    let plate_of = |s: &Value| -> Option<String> {
        s["boxes"].as_array()?.iter().find(|b| b["instance_id"] == WEB_FRONTEND)?["plate_id"].as_str().map(Into::into)
    };
    let count = |s: &Value| s["boxes"].as_array().map_or(0, Vec::len) + s["unplaced"].as_array().map_or(0, Vec::len);

    service.tick_now();
    ensure(plate_of(&scene()?).as_deref() == Some("1"), || "box not on plate 1".into())?;
    let body = json!({ "kind": "migrate", "subject": WEB_FRONTEND, "target": "2" }).to_string();
    let resp = agent
        .post(format!("{base}/commands"))
        .header("content-type", "application/json")
        .send(body.as_str())
        .map_err(|e| e.to_string())?;
    ensure(resp.status().as_u16() == 202, || format!("POST answered {}", resp.status()))?;

    let mock_delay = rig.mock.transition_delay_migrate;
    let limit = mock_delay.ceil() as usize + 2;
    let mut landed = None;
    for tick in 1..=limit + 2 {
        rig.advance(1.0);
        service.tick_now();
        let s = scene()?;
        ensure(count(&s) == 3, || format!("tick {tick}: {} instances", count(&s)))?;
        if plate_of(&s).as_deref() == Some("2") {
            landed = Some(tick);
            break;
        }
    }
    drop(driver);
    let tick = landed.ok_or("box never reached plate 2")?;
    ensure(tick <= limit, || format!("landed after {tick} polls, limit {limit}"))?;
    Ok(format!("on target plate after {tick} polls (mock delay {mock_delay} s + 2 polls), 3 instances throughout"))
}

fn energy_shading() -> Result<String, String> {
    let f = |w, lo, hi| energy_shade(w, lo, hi).map_err(|e| e.to_string());
    let mut ranges = vec![(50.0, 400.0), (0.0, 1.0), (-20.0, 20.0)];
    let mut runner = runner(200);
    let strat = (-1_000_000i64..1_000_000, 1i64..1_000_000);
    for _ in 0..200 {
        let (lo, span) = strat.new_tree(&mut runner).unwrap().current();
        ranges.push((lo as f64, (lo + span) as f64));
    }
    for &(lo, hi) in &ranges {
        let mid = (lo + hi) / 2.0;
        let got = [f(lo, lo, hi)?, f(mid, lo, hi)?, f(hi, lo, hi)?, f(lo - 1.0, lo, hi)?, f(hi + (hi - lo) + 1.0, lo, hi)?];
        ensure(got == [0.0, 0.5, 1.0, 0.0, 1.0], || format!("[{lo}, {hi}] gave {got:?}"))?;
    }
    ensure(f(1.0, 5.0, 5.0).is_err(), || "empty range accepted".into())?;

    let state = twin_core::model::fixtures::f1();
    let one = [EnergyReading { hypervisor_id: HypervisorId::new("1"), watts: 225.0, read_at: state.observed_at }];
    let shades: Vec<Option<f64>> = scene_of(&state, &one).plates.iter().map(|p| p.energy_shade).collect();
    ensure(shades == [Some(0.5), None], || format!("partial readings gave {shades:?}"))?;

    // metering down from the start: the service carries no shade at all
    let rig = Rig::f1();
    rig.world.lock().unwrap().push_fault(FaultRule {
        endpoint: Endpoint::Metering,
        behaviour: FaultBehaviour::Status(503),
        count: None,
    });
    let mut r = rig.reconciler(ReconcilerPolicy::default());
    let scene = r.tick().scene.ok_or("poll failed")?;
    let json: Value = serde_json::from_str(&scene.to_canonical_json()).unwrap();
    ensure(json["plates"].as_array().unwrap().iter().all(|p| p["energy_shade"].is_null()), || {
        "shade without reading".into()
    })?;
    Ok(format!("0/0.5/1 and clamping exact over {} ranges, unread plates unshaded", ranges.len()))
}

/// Instances by id with their plate and status, plus plates with state and watts.
type Topology = (BTreeMap<String, (String, InstanceStatus)>, BTreeMap<String, (HostState, Option<f64>)>);

fn topology(s: &SceneSnapshot) -> Topology {
    let boxes = s.boxes.iter().map(|b| (b.instance_id.to_string(), (b.plate_id.to_string(), b.status))).collect();
    let plates = s.plates.iter().map(|p| (p.hypervisor_id.to_string(), (p.state, p.power_watts))).collect();
    (boxes, plates)
}

fn apply_events(t: &mut Topology, events: &[Arc<twin_service::StreamEvent>]) -> Result<(), String> {
    for e in events {
        let TwinEvent::Cloud(c) = &e.event else { continue };
        let id = c.subject_id.to_string();
        let missing = || format!("event {} for unknown {id}", e.seq);
        match (c.kind, &c.after) {
            (EventKind::InstanceCreated, Some(EventValue::Instance(vm))) => {
                let host = vm.hypervisor_id.as_ref().ok_or("created without host")?;
                t.0.insert(id, (host.to_string(), vm.status));
            }
            (EventKind::InstanceDeleted, _) => {
                t.0.remove(&id).ok_or_else(missing)?;
            }
            (EventKind::PowerChanged, Some(EventValue::Status(st))) => t.0.get_mut(&id).ok_or_else(missing)?.1 = *st,
            (EventKind::Migrated, Some(EventValue::Host(Some(h)))) => {
                t.0.get_mut(&id).ok_or_else(missing)?.0 = h.to_string()
            }
            (EventKind::HostStateChanged, Some(EventValue::HostState(st))) => {
                t.1.get_mut(&id).ok_or_else(missing)?.0 = *st
            }
            (EventKind::MeteringChanged, Some(EventValue::Watts(w))) => t.1.get_mut(&id).ok_or_else(missing)?.1 = *w,
            other => return Err(format!("unexpected event {other:?}")),
        }
    }
    Ok(())
}

const KINDS: [CommandKind; 5] =
    [CommandKind::Start, CommandKind::Stop, CommandKind::Migrate, CommandKind::PowerOn, CommandKind::PowerOff];
const ENDPOINTS: [Endpoint; 7] = [
    Endpoint::Servers,
    Endpoint::Hypervisors,
    Endpoint::Flavors,
    Endpoint::Projects,
    Endpoint::ServerAction,
    Endpoint::LiveMigrate,
    Endpoint::Metering,
];

/// Turns raw draws into a scenario whose steps all make sense.
fn build_scenario(draws: Vec<(u16, u8, u32, u32)>) -> Scenario {
    let mut present: Vec<String> = [WEB_FRONTEND, BATCH_WORKER, DB_PRIMARY].map(String::from).to_vec();
    let f1 = twin_core::model::fixtures::f1();
    let mut at = 0.0;
    let mut steps = Vec::new();
    for (k, (gap, op, a, b)) in draws.into_iter().enumerate() {
        at += gap as f64 / 4.0;
        let host = if b % 2 == 0 { "1" } else { "2" };
        let action = match op % 10 {
            0..=3 => {
                let mut subjects = present.clone();
                subjects.extend(["1".into(), "2".into()]);
                let kind = KINDS[a as usize % KINDS.len()];
                Action::Command(twin_service::Command {
                    kind,
                    subject: subjects[b as usize % subjects.len()].as_str().into(),
                    target: (kind == CommandKind::Migrate).then(|| host.into()),
                })
            }
            4 => Action::Fault(FaultRule {
                endpoint: ENDPOINTS[a as usize % ENDPOINTS.len()],
                behaviour: match b % 3 {
                    0 => FaultBehaviour::Status(500),
                    1 => FaultBehaviour::Timeout,
                    _ => FaultBehaviour::Drop,
                },
                count: Some(1 + b % 3),
            }),
            5 => Action::ClearFaults,
            6 => Action::Advance { seconds: 0.5 + (a % 6) as f64 / 2.0 },
            7 | 8 => {
                let id = format!("vm-{k}");
                present.push(id.clone());
                Action::CreateInstance {
                    instance: VmInstance {
                        id: id.as_str().into(),
                        name: id.clone(),
                        flavour_id: f1.flavours[a as usize % f1.flavours.len()].id.clone(),
                        project_id: f1.projects[b as usize % f1.projects.len()].id.clone(),
                        hypervisor_id: Some(host.into()),
                        status: InstanceStatus::Active,
                    },
                }
            }
            _ if !present.is_empty() => {
                let id = present.remove(a as usize % present.len());
                Action::DeleteInstance { instance_id: id.as_str().into() }
            }
            _ => Action::ClearFaults,
        };
        steps.push(Step { at, action });
    }
    Scenario { name: "random".into(), settings: ReplaySettings { settle_s: 6.0, ..ReplaySettings::default() }, steps }
}

fn snapshot_event_coherence() -> Result<String, String> {
    let draws = prop::collection::vec((0u16..12, any::<u8>(), any::<u32>(), any::<u32>()), 1..20);
    let pairs = Cell::new(0usize);
    let events = Cell::new(0usize);
    runner(100)
        .run(&draws, |d| {
            let scenario = build_scenario(d);
            let out = replay(&scenario).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let first = out.ticks[0].scene.as_ref().expect("first poll publishes");
            let mut model = topology(&first.scene);
            for t in &out.ticks[1..] {
                apply_events(&mut model, &t.events).map_err(TestCaseError::fail)?;
                let scene = &t.scene.as_ref().expect("a scene stays published").scene;
                prop_assert!(scene.unplaced.is_empty());
                prop_assert_eq!(&model, &topology(scene), "after tick at {} ms", t.at_ms);
                pairs.set(pairs.get() + 1);
                events.set(events.get() + t.events.len());
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("100 random runs, {} snapshot pairs, {} events replayed", pairs.get(), events.get()))
}

fn mock_determinism() -> Result<String, String> {
    let a = twin_testkit::trace::run_golden_script();
    let b = twin_testkit::trace::run_golden_script();
    ensure(a == b, || "two runs differ".into())?;
    ensure(a == twin_testkit::trace::GOLDEN_TRACE, || "trace differs from the golden file".into())?;
    Ok(format!("{} bytes, {} exchanges, identical to golden", a.len(), a.lines().filter(|l| l.starts_with("@ ")).count()))
}

fn main() {
    let checks: [(u8, &str, Check, Duration); 8] = [
        (1, "plate geometry", plate_geometry, Duration::from_secs(1)),
        (2, "flavour geometry", flavour_geometry, Duration::from_secs(1)),
        (3, "placement", placement, Duration::from_secs(10)),
        (4, "bidirectional loop", bidirectional_loop, Duration::from_secs(5)),
        (5, "migration end to end", migration_end_to_end, Duration::from_secs(5)),
        (6, "energy shading", energy_shading, Duration::from_secs(1)),
        (7, "snapshot/event coherence", snapshot_event_coherence, Duration::from_secs(30)),
        (8, "mock determinism", mock_determinism, Duration::from_secs(1)),
    ];
    let mut failed = 0;
    for (n, name, check, limit) in checks {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let took = started.elapsed();
        let result = match result {
            Ok(detail) if took > limit => Err(format!("{detail}; but took longer than {limit:?}")),
            r => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(e) => ("FAIL", e),
        };
        failed += result.is_err() as usize;
        println!("{tag} [{n}] {name}: {detail} ({:.2} s, limit {} s)", took.as_secs_f64(), limit.as_secs());
    }
    if failed > 0 {
        println!("{failed} of 8 criteria failed");
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}
