mod support;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use smartrescue_broker::{serve, BrokerConfig};
use smartrescue_client::{Client, ClientConfig, Delivery};
use smartrescue_core::model::{ActivityState, EventAlert, SensorKind};
use smartrescue_core::protocol::Role;
use smartrescue_core::SystemClock;
use smartrescue_sim::runner::VIRTUAL_EPOCH_MS;
use smartrescue_sim::{plan_agent, plan_scenario, run_scenario, RunOptions, SimError};
use support::small_spec;

#[test]
fn sixty_seconds_give_thirty_readings_per_scalar_kind() {
    let spec = small_spec();
    for i in 0..spec.agents.len() {
        let plan = plan_agent(&spec, i);
        let mut counts: BTreeMap<SensorKind, usize> = BTreeMap::new();
        for p in &plan {
            *counts.entry(p.kind).or_default() += 1;
        }
        for kind in [
            SensorKind::Thermometer,
            SensorKind::Humidity,
            SensorKind::Barometer,
            SensorKind::Light,
            SensorKind::Gps,
        ] {
            assert_eq!(counts[&kind], 30, "{kind}");
        }
        // 3000 samples = 23 full windows, plus one alert for the agent that falls
        let alerts = plan.iter().filter(|p| p.fall_impact_offset_ms.is_some()).count();
        assert_eq!(counts[&SensorKind::Accelerometer], 23 + alerts);
        assert!(plan.windows(2).all(|w| w[0].offset_ms <= w[1].offset_ms));
    }
}

#[test]
fn falling_agent_raises_one_alert_at_impact() {
    let spec = small_spec();
    let plan = plan_agent(&spec, 2);
    let alerts: Vec<_> = plan
        .iter()
        .filter_map(|p| p.fall_impact_offset_ms.map(|t| (p.offset_ms, t)))
        .collect();
    assert_eq!(alerts.len(), 1);
    let (raised, impact) = alerts[0];
    assert_eq!(impact, 12_000);
    assert!(
        raised >= impact + 10_000 && raised <= impact + 10_000 + 2 * 2_560,
        "raised at {raised}"
    );
    for i in [0, 1] {
        assert!(plan_agent(&spec, i).iter().all(|p| p.fall_impact_offset_ms.is_none()));
    }
}

#[test]
fn agents_report_their_scheduled_activity() {
    let spec = small_spec();
    let windows: Vec<_> = plan_agent(&spec, 0)
        .into_iter()
        .filter(|p| p.kind == SensorKind::Accelerometer && p.offset_ms <= 38_000)
        .collect();
    let walking = windows
        .iter()
        .filter(|p| p.activity.unwrap().state == ActivityState::Walking)
        .count();
    assert!(walking * 100 >= windows.len() * 95, "{walking}/{}", windows.len());
    let gps_late = plan_agent(&spec, 0)
        .into_iter()
        .filter(|p| p.kind == SensorKind::Gps && p.offset_ms >= 46_000)
        .all(|p| p.activity.unwrap().state == ActivityState::Still);
    assert!(gps_late);
}

#[test]
fn planning_is_deterministic() {
    let spec = small_spec();
    let a = plan_scenario(&spec, VIRTUAL_EPOCH_MS);
    let b = plan_scenario(&spec, VIRTUAL_EPOCH_MS);
    let enc = |p: &Vec<(String, Vec<smartrescue_core::SensorEvent>)>| {
        p.iter()
            .flat_map(|(_, evs)| evs.iter().map(|e| e.canonical_encode()))
            .collect::<Vec<_>>()
    };
    assert_eq!(enc(&a), enc(&b));
    let mut other = spec.clone();
    other.seed += 1;
    assert_ne!(enc(&a), enc(&plan_scenario(&other, VIRTUAL_EPOCH_MS)));
}

async fn collect_run(
    spec: &smartrescue_sim::ScenarioSpec,
) -> (smartrescue_sim::RunReport, BTreeMap<String, Vec<String>>) {
    let broker = serve(
        BrokerConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 0)),
            ..Default::default()
        },
        Arc::new(SystemClock),
    )
    .await
    .unwrap();
    let addr = broker.local_addr().to_string();
    let mut config = ClientConfig::new(addr.clone(), Role::Subscriber, "observer");
    config.stream_buffer = 100_000;
    let observer = Client::connect(config).await.unwrap();
    let mut all = observer.subscribe("").await.unwrap();
    let report = run_scenario(
        spec,
        &addr,
        &RunOptions {
            virtual_clock: true,
            ..Default::default()
        },
    )
    .await
    .unwrap();
    let mut streams: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut received = 0;
    while received < report.total() {
        match all.next_within(Duration::from_secs(3)).await {
            Some(Delivery::Event { event, .. }) => {
                streams
                    .entry(event.event().publisher_id.clone())
                    .or_default()
                    .push(event.raw().to_string());
                received += 1;
            }
            Some(Delivery::Presence(_)) => {}
            None => panic!("only {received} of {} events arrived", report.total()),
        }
    }
    broker.shutdown().await;
    (report, streams)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn virtual_clock_runs_are_byte_identical_and_match_the_plan() {
    let spec = small_spec();
    let (report_a, a) = collect_run(&spec).await;
    let (report_b, b) = collect_run(&spec).await;
    assert_eq!(report_a, report_b);
    assert_eq!(a, b);
    for (agent, events) in plan_scenario(&spec, VIRTUAL_EPOCH_MS) {
        let expected: Vec<String> = events.iter().map(|e| e.canonical_encode()).collect();
        assert_eq!(a[&agent], expected, "{agent}");
        let r = &report_a.agents[&agent];
        assert_eq!(r.published as usize, expected.len());
    }
    assert_eq!(report_a.agents["faller"].fall_alerts, 1);
    let alert_line = a["faller"].iter().find(|l| l.contains("\"alert\"")).unwrap();
    let ev = smartrescue_core::SensorEvent::decode(alert_line).unwrap();
    assert_eq!(
        ev.alert,
        Some(EventAlert::Fall {
            impact_time_ms: VIRTUAL_EPOCH_MS + 12_000
        })
    );
}

#[tokio::test]
async fn unreachable_broker_is_reported() {
    let port = tokio::net::TcpListener::bind("127.0.0.1:0")
        .await
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let err = run_scenario(&small_spec(), &format!("127.0.0.1:{port}"), &RunOptions::default())
        .await
        .unwrap_err();
    assert!(matches!(err, SimError::BrokerUnreachable(_)), "{err:?}");
}
