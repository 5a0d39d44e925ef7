mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::{Arc, Mutex};

use common::*;
use twin_core::{HostState, HypervisorId, InstanceId, InstanceStatus};
use twin_mock::{Endpoint, FaultBehaviour, FaultRule, MockConfig, MockCredentials, IN_PROCESS_BASE};
use twin_service::cloud::{
    CloudError, HostAction, HostPower, HostPowerDriver, MeteringConfig, MeteringSource, VmAction,
};
use twin_service::runtime::mock_credentials;
use twin_service::transport::HttpTransport;
use twin_service::{CloudClient, CloudSession, Credentials, SystemClock};

fn fault(endpoint: Endpoint, behaviour: FaultBehaviour, count: Option<u32>) -> FaultRule {
    FaultRule { endpoint, behaviour, count }
}

#[test]
fn inventory_matches_fixture_bit_for_bit() {
    let rig = Rig::f1();
    let mut s = rig.session();
    let state = s.fetch_inventory(1).unwrap();
    assert_eq!(state.to_canonical_json(), twin_core::model::fixtures::F1_JSON);
}

#[test]
fn empty_cloud_still_lists_flavours() {
    let rig = Rig::f1();
    {
        let mut w = rig.world.lock().unwrap();
        for id in [WEB_FRONTEND, BATCH_WORKER, DB_PRIMARY] {
            w.delete_instance(&InstanceId::new(id)).unwrap();
        }
    }
    let state = rig.session().fetch_inventory(1).unwrap();
    assert!(state.instances.is_empty());
    assert_eq!(state.flavours.len(), 5);
}

#[test]
fn failing_list_is_named_and_nothing_is_emitted() {
    let rig = Rig::f1();
    rig.world.lock().unwrap().push_fault(fault(Endpoint::Hypervisors, FaultBehaviour::Status(500), None));
    let err = rig.session().fetch_inventory(1).unwrap_err();
    match &err {
        CloudError::Inventory(f) => assert_eq!(f.endpoints(), vec!["hypervisors"]),
        other => panic!("{other:?}"),
    }
    assert!(err.to_string().contains("hypervisors"));
    assert!(err.is_transient());
}

#[test]
fn single_server_error_is_retried_away() {
    let rig = Rig::f1();
    rig.world.lock().unwrap().push_fault(fault(Endpoint::Servers, FaultBehaviour::Status(503), Some(2)));
    assert_eq!(rig.session().fetch_inventory(1).unwrap().instances.len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let rig = Rig::f1();
    rig.world.lock().unwrap().push_fault(fault(Endpoint::Flavors, FaultBehaviour::Status(403), Some(1)));
    let mut s = rig.session();
    match s.fetch_inventory(1).unwrap_err() {
        CloudError::Inventory(f) => {
            assert_eq!(f.endpoints(), vec!["flavors"]);
            assert!(matches!(f.failures[0].1, CloudError::Http { status: 403, .. }));
        }
        other => panic!("{other:?}"),
    }
    // the one-shot fault was consumed by a single request
    assert!(s.fetch_inventory(2).is_ok());
}

#[test]
fn wrong_password_yields_no_token() {
    let rig = Rig::f1();
    let mut bad = MockConfig::default();
    bad.credentials = MockCredentials { password: "wrong".into(), ..MockCredentials::default() };
    let mut s = CloudSession::new(rig.client(), mock_credentials(&bad));
    assert_eq!(s.authenticate().unwrap_err(), CloudError::BadCredentials);
    assert_eq!(s.fetch_inventory(1).unwrap_err(), CloudError::BadCredentials);
    assert_eq!(s.authentications(), 0);
}

#[test]
fn token_is_reused_until_it_expires() {
    let rig = Rig::new(MockConfig { token_ttl: 1.0, ..MockConfig::default() });
    let mut s = rig.session();
    for seq in 1..=3 {
        s.fetch_inventory(seq).unwrap();
    }
    assert_eq!(s.authentications(), 1);
    rig.advance(1.5);
    s.fetch_inventory(4).unwrap();
    assert_eq!(s.authentications(), 2);
}

#[test]
fn revoked_token_triggers_one_reauthentication() {
    let rig = Rig::f1();
    let client = rig.client();
    let creds = mock_credentials(&rig.mock);
    let mut token = client.authenticate(&creds).unwrap();
    assert!(token.endpoint("compute").unwrap().starts_with(IN_PROCESS_BASE));
    // a token the cloud never issued is exactly what an expired one looks like
    token.token = "gAAAAAforged".into();
    assert_eq!(client.fetch_inventory(&token, &creds, 1).unwrap_err(), CloudError::TokenExpired);

    // a restarted cloud forgets every token it issued
    let mut s = rig.session();
    s.fetch_inventory(1).unwrap();
    *rig.world.lock().unwrap() = twin_mock::f1_world(MockConfig::default());
    s.fetch_inventory(2).unwrap();
    assert_eq!(s.authentications(), 2);
}

#[test]
fn stop_is_accepted_then_observed() {
    let rig = Rig::f1();
    let mut s = rig.session();
    s.send_vm_action(&InstanceId::new(WEB_FRONTEND), &VmAction::Stop).unwrap();
    let mut polls = 0;
    loop {
        polls += 1;
        rig.advance(1.0);
        let state = s.fetch_inventory(polls).unwrap();
        if state.instance(&InstanceId::new(WEB_FRONTEND)).unwrap().status == InstanceStatus::Shutoff {
            break;
        }
        assert!(polls < 4, "not shut off after {polls} polls");
    }
    assert!(polls <= 4);
}

#[test]
fn conflicting_and_unknown_actions() {
    let rig = Rig::f1();
    let mut s = rig.session();
    assert!(matches!(
        s.send_vm_action(&InstanceId::new(WEB_FRONTEND), &VmAction::Start),
        Err(CloudError::Conflict(_))
    ));
    assert!(matches!(
        s.send_vm_action(&InstanceId::new("no-such-vm"), &VmAction::Stop),
        Err(CloudError::NotFound(_))
    ));
    assert!(matches!(
        s.send_vm_action(&InstanceId::new(WEB_FRONTEND), &VmAction::MigrateTo("compute-99".into())),
        Err(CloudError::BadRequest(_))
    ));
}

#[test]
fn live_migration_passes_through_migrating() {
    let rig = Rig::f1();
    let mut s = rig.session();
    let id = InstanceId::new(WEB_FRONTEND);
    s.send_vm_action(&id, &VmAction::MigrateTo("compute-02".into())).unwrap();
    assert_eq!(rig.instance_status(WEB_FRONTEND), InstanceStatus::Migrating);
    rig.advance(3.0);
    let state = s.fetch_inventory(1).unwrap();
    let vm = state.instance(&id).unwrap();
    assert_eq!(vm.status, InstanceStatus::Active);
    assert_eq!(vm.hypervisor_id, Some(HypervisorId::new("2")));
}

#[test]
fn refused_live_migration_falls_back_to_cold() {
    let rig = Rig::f1();
    rig.world.lock().unwrap().push_fault(fault(Endpoint::LiveMigrate, FaultBehaviour::Status(400), Some(1)));
    let mut s = rig.session();
    let id = InstanceId::new(BATCH_WORKER);
    // a shut-off instance cannot live-migrate anyway
    s.send_vm_action(&id, &VmAction::MigrateTo("compute-02".into())).unwrap();
    rig.advance(3.0);
    let state = s.fetch_inventory(1).unwrap();
    let vm = state.instance(&id).unwrap();
    assert_eq!(vm.hypervisor_id, Some(HypervisorId::new("2")));
    assert_eq!(vm.status, InstanceStatus::Shutoff);
}

#[test]
fn host_power_guard_and_conflicts() {
    let rig = Rig::f1();
    let mut s = rig.session();
    let state = s.fetch_inventory(1).unwrap();
    let guarded = HostPower::default();
    let h2 = HypervisorId::new("2");
    assert!(matches!(
        s.send_host_action(&guarded, &state, &h2, HostAction::PowerOff),
        Err(CloudError::Policy(_))
    ));
    assert!(matches!(
        s.send_host_action(&guarded, &state, &h2, HostAction::PowerOn),
        Err(CloudError::Conflict(_))
    ));
    assert!(matches!(
        s.send_host_action(&guarded, &state, &HypervisorId::new("9"), HostAction::PowerOn),
        Err(CloudError::NotFound(_))
    ));
    let forced = HostPower { force_host_off: true, ..HostPower::default() };
    s.send_host_action(&forced, &state, &h2, HostAction::PowerOff).unwrap();
    let mid = s.fetch_inventory(2).unwrap();
    assert_eq!(mid.hypervisor(&h2).unwrap().state, HostState::Transitioning);
    rig.advance(2.0);
    let after = s.fetch_inventory(3).unwrap();
    assert_eq!(after.hypervisor(&h2).unwrap().state, HostState::Down);
    assert_eq!(after.instance(&InstanceId::new(DB_PRIMARY)).unwrap().status, InstanceStatus::Shutoff);
}

#[test]
fn idle_host_powers_off_through_the_epdu() {
    let rig = Rig::f1();
    let mut s = rig.session();
    s.send_vm_action(&InstanceId::new(DB_PRIMARY), &VmAction::Stop).unwrap();
    rig.advance(2.0);
    let state = s.fetch_inventory(1).unwrap();
    let h2 = HypervisorId::new("2");
    assert_eq!(state.running_on(&h2), 0);
    let epdu = HostPower {
        driver: HostPowerDriver::Epdu {
            base_url: format!("{IN_PROCESS_BASE}/pdu"),
            outlets: BTreeMap::from([(h2.clone(), "pdu-a2".to_owned())]),
        },
        force_host_off: false,
    };
    s.send_host_action(&epdu, &state, &h2, HostAction::PowerOff).unwrap();
    rig.advance(2.0);
    let after = s.fetch_inventory(2).unwrap();
    assert_eq!(after.hypervisor(&h2).unwrap().state, HostState::Down);
    let h1 = HypervisorId::new("1");
    assert!(matches!(
        s.send_host_action(&epdu, &after, &h1, HostAction::PowerOff),
        Err(CloudError::Policy(_))
    ));
    // an unmapped host is a configuration problem, caught before any request
    let forced = HostPower { force_host_off: true, ..epdu };
    assert!(matches!(
        s.send_host_action(&forced, &after, &h1, HostAction::PowerOff),
        Err(CloudError::Config(_))
    ));
}

#[test]
fn metering_from_file_and_mapping_misses() {
    let rig = Rig::f1();
    let state = rig.session().fetch_inventory(1).unwrap();
    let mut file = tempfile::NamedTempFile::new().unwrap();
    write!(
        file,
        r#"{{"outlets":[{{"name":"a","watts":120.0}},{{"name":"b","watts":310.0}},{{"name":"c","watts":9.0}},{{"name":"ghost","watts":50.0}}]}}"#
    )
    .unwrap();
    let config = MeteringConfig {
        source: Some(MeteringSource::File(file.path().to_owned())),
        outlets: BTreeMap::from([
            ("a".to_owned(), HypervisorId::new("1")),
            ("b".to_owned(), HypervisorId::new("2")),
            ("ghost".to_owned(), HypervisorId::new("77")),
        ]),
    };
    let readings = rig.client().fetch_metering(&config, None, &state).unwrap();
    let got: Vec<(&str, f64)> = readings.iter().map(|r| (r.hypervisor_id.as_str(), r.watts)).collect();
    assert_eq!(got, vec![("1", 120.0), ("2", 310.0)]);
}

#[test]
fn dual_outlets_are_summed() {
    let rig = Rig::f1();
    let state = rig.session().fetch_inventory(1).unwrap();
    let mut config = rig.metering();
    config.outlets.insert("pdu-a3".into(), HypervisorId::new("1"));
    let mut s = rig.session();
    let readings = s.fetch_metering(&config, &state).unwrap();
    assert_eq!(readings[0].watts, 124.5);
    assert_eq!(readings[1].watts, 310.0);
}

#[test]
fn metering_timeout_is_transient() {
    let rig = Rig::f1();
    rig.world.lock().unwrap().push_fault(fault(Endpoint::Metering, FaultBehaviour::Timeout, None));
    let mut s = rig.session();
    let state = s.fetch_inventory(1).unwrap();
    let err = s.fetch_metering(&rig.metering(), &state).unwrap_err();
    assert!(err.is_transient(), "{err:?}");
    assert!(s.fetch_metering(&MeteringConfig::default(), &state).unwrap().is_empty());
}

#[test]
fn real_http_against_standalone_mock() {
    let rig = Rig::f1();
    let world = Arc::new(Mutex::new(twin_mock::f1_world(MockConfig::default())));
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(async move { axum::serve(listener, twin_mock::server::router(world)).await });

    let client = CloudClient::new(HttpTransport::new(std::time::Duration::from_secs(5)), Arc::new(SystemClock));
    let creds = Credentials::new(&format!("http://{addr}/identity/v3"), "admin", "secret", "admin", "Default").unwrap();
    let mut s = CloudSession::new(client, creds);
    let state = s.fetch_inventory(1).unwrap();
    let expected = rig.session().fetch_inventory(1).unwrap();
    assert_eq!(state.hypervisors, expected.hypervisors);
    assert_eq!(state.instances, expected.instances);
    s.send_vm_action(&InstanceId::new(WEB_FRONTEND), &VmAction::Stop).unwrap();
    rt.shutdown_background();

    let unreachable = CloudClient::new(HttpTransport::new(std::time::Duration::from_secs(2)), Arc::new(SystemClock));
    let creds = Credentials::new(&format!("http://{addr}/identity/v3"), "admin", "secret", "admin", "Default").unwrap();
    std::thread::sleep(std::time::Duration::from_millis(50));
    let err = unreachable.authenticate(&creds).unwrap_err();
    assert!(err.is_transient(), "{err:?}");
}
