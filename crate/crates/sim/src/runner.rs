//! Turns a scenario into per-agent event timelines and publishes them.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use smartrescue_client::{Client, ClientConfig, ClientError};
use smartrescue_core::edge::{classify_activity, magnitude, AccelWindow, FallDetector, SAMPLE_RATE_HZ, WINDOW_LEN};
use smartrescue_core::model::{ActivityEstimate, EventAlert, GeoPosition, SensorEvent, SensorKind, SensorValue};
use smartrescue_core::protocol::Role;
use smartrescue_core::{Clock, SystemClock};

use crate::accel::AccelGenerator;
use crate::field::field_at;
use crate::scenario::{AgentSpec, ScenarioSpec};
use crate::SimError;

/// Scalar sensors and GPS report once per this period.
pub const PUBLISH_PERIOD_MS: i64 = 2_000;
/// Timestamp of scenario time zero when running on the virtual clock.
pub const VIRTUAL_EPOCH_MS: i64 = 1_700_000_000_000;

/// Order in which one tick's readings are published.
pub const TICK_KINDS: [SensorKind; 5] = [
    SensorKind::Thermometer,
    SensorKind::Humidity,
    SensorKind::Barometer,
    SensorKind::Light,
    SensorKind::Gps,
];

/// One reading an agent will publish, relative to scenario start.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedEvent {
    pub offset_ms: i64,
    pub kind: SensorKind,
    pub value: SensorValue,
    pub position: GeoPosition,
    pub activity: Option<ActivityEstimate>,
    /// Fall impact time relative to scenario start.
    pub fall_impact_offset_ms: Option<i64>,
}

impl PlannedEvent {
    /// Fill in identity and absolute time the way the client SDK does.
    pub fn to_event(&self, publisher_id: &str, seq: u64, base_ms: i64) -> SensorEvent {
        let mut ev = SensorEvent::new(
            format!("{publisher_id}-{seq}"),
            publisher_id,
            seq,
            base_ms + self.offset_ms,
            self.kind,
            self.value,
            self.position,
        )
        .expect("planned readings are valid by construction");
        ev.activity = self.activity;
        ev.alert = self.fall_impact_offset_ms.map(|t| EventAlert::Fall {
            impact_time_ms: base_ms + t,
        });
        ev
    }
}

fn agent_seed(spec: &ScenarioSpec, index: usize) -> u64 {
    spec.seed
        .wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn sample_period_ms() -> f64 {
    1000.0 / SAMPLE_RATE_HZ
}

/// The full, deterministic timeline of one agent's readings, sorted by time.
pub fn plan_agent(spec: &ScenarioSpec, index: usize) -> Vec<PlannedEvent> {
    let agent = &spec.agents[index];
    let duration_ms = (spec.duration_s * 1000.0).round() as i64;
    let position_at = |t_ms: i64| spec.cell_to_geo(agent.cell_at(spec, t_ms as f64 / 1000.0));

    // (offset, order within the same instant, event)
    let mut timeline: Vec<(i64, u8, PlannedEvent)> = Vec::new();
    let mut windows: Vec<(i64, ActivityEstimate)> = Vec::new();

    let mut generator = AccelGenerator::new(agent_seed(spec, index));
    let mut detector = FallDetector::new();
    let n_samples = (spec.duration_s * SAMPLE_RATE_HZ).floor() as usize;
    let fall_index = agent.fall_at_s.map(|t| (t * SAMPLE_RATE_HZ).round() as usize);
    let mut buffer: Vec<[f64; 3]> = Vec::with_capacity(WINDOW_LEN);
    let mut last_mean = [0.0, 0.0, 1.0];
    for i in 0..n_samples {
        let t_ms = (i as f64 * sample_period_ms()).round() as i64;
        if Some(i) == fall_index {
            generator.inject_fall();
        }
        let sample = generator.sample(agent.activity_at(t_ms as f64 / 1000.0));
        if let Some(alert) = detector.push(magnitude(sample), t_ms) {
            timeline.push((
                t_ms,
                1,
                PlannedEvent {
                    offset_ms: t_ms,
                    kind: SensorKind::Accelerometer,
                    value: SensorValue::Vector(last_mean),
                    position: position_at(t_ms),
                    activity: windows.last().map(|w| w.1),
                    fall_impact_offset_ms: Some(alert.impact_time_ms),
                },
            ));
        }
        buffer.push(sample);
        if buffer.len() == WINDOW_LEN {
            let start_ms = t_ms - ((WINDOW_LEN - 1) as f64 * sample_period_ms()).round() as i64;
            let window = AccelWindow::new(std::mem::take(&mut buffer), start_ms).expect("generated samples are finite");
            let estimate = classify_activity(&window);
            last_mean = window.mean_vector();
            let end_ms = t_ms + sample_period_ms().round() as i64;
            windows.push((end_ms, estimate));
            timeline.push((
                end_ms,
                0,
                PlannedEvent {
                    offset_ms: end_ms,
                    kind: SensorKind::Accelerometer,
                    value: SensorValue::Vector(last_mean),
                    position: position_at(end_ms),
                    activity: Some(estimate),
                    fall_impact_offset_ms: None,
                },
            ));
        }
    }

    let mut t_ms = 0;
    while t_ms < duration_ms {
        let t_s = t_ms as f64 / 1000.0;
        let cell = agent.cell_at(spec, t_s);
        let field = field_at(spec, cell, t_s).expect("agent cells lie inside the grid");
        let position = spec.cell_to_geo(cell);
        let latest_activity = windows.iter().take_while(|(end, _)| *end <= t_ms).last().map(|w| w.1);
        for (order, kind) in TICK_KINDS.iter().enumerate() {
            let value = match kind {
                SensorKind::Thermometer => field.temp_c,
                SensorKind::Humidity => field.humidity_pct,
                SensorKind::Barometer => field.pressure_hpa,
                SensorKind::Light => field.light_lux,
                _ => agent.speed_m_per_s(spec, t_s),
            };
            timeline.push((
                t_ms,
                2 + order as u8,
                PlannedEvent {
                    offset_ms: t_ms,
                    kind: *kind,
                    value: SensorValue::Scalar(value),
                    position,
                    activity: (*kind == SensorKind::Gps).then_some(latest_activity).flatten(),
                    fall_impact_offset_ms: None,
                },
            ));
        }
        t_ms += PUBLISH_PERIOD_MS;
    }

    timeline.sort_by_key(|(t, order, _)| (*t, *order));
    timeline.into_iter().map(|(_, _, e)| e).collect()
}

/// Every agent's events with sequence numbers, ids and timestamps assigned
/// exactly as a run on the virtual clock publishes them.
pub fn plan_scenario(spec: &ScenarioSpec, base_ms: i64) -> Vec<(String, Vec<SensorEvent>)> {
    (0..spec.agents.len())
        .map(|i| {
            let id = &spec.agents[i].agent_id;
            let events = plan_agent(spec, i)
                .iter()
                .enumerate()
                .map(|(n, p)| p.to_event(id, n as u64 + 1, base_ms))
                .collect();
            (id.clone(), events)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AgentReport {
    pub published: u64,
    pub per_kind: BTreeMap<SensorKind, u64>,
    pub fall_alerts: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub agents: BTreeMap<String, AgentReport>,
}

impl RunReport {
    pub fn total(&self) -> u64 {
        self.agents.values().map(|a| a.published).sum()
    }

    pub fn total_by_kind(&self) -> BTreeMap<SensorKind, u64> {
        let mut out = BTreeMap::new();
        for a in self.agents.values() {
            for (k, n) in &a.per_kind {
                *out.entry(*k).or_insert(0) += n;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Publish as fast as possible with timestamps from a fixed epoch
    /// instead of pacing in real time.
    pub virtual_clock: bool,
    /// Scenario time zero when `virtual_clock` is set.
    pub epoch_ms: i64,
    /// Real-time pacing multiplier; 2.0 runs twice as fast as scenario time.
    pub speed: f64,
    pub heartbeat_interval: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            virtual_clock: false,
            epoch_ms: VIRTUAL_EPOCH_MS,
            speed: 1.0,
            heartbeat_interval: smartrescue_client::DEFAULT_HEARTBEAT_INTERVAL,
        }
    }
}

/// Connect one publisher per agent and publish every agent's timeline. Each
/// client says BYE when its agent's timeline is exhausted.
pub async fn run_scenario(
    spec: &ScenarioSpec,
    broker_address: &str,
    options: &RunOptions,
) -> Result<RunReport, SimError> {
    spec.validate()?;
    let spec = Arc::new(spec.clone());

    // connect everyone first so a bad address fails before anything is sent
    let mut clients = Vec::with_capacity(spec.agents.len());
    for agent in &spec.agents {
        let mut config = ClientConfig::new(broker_address, Role::Publisher, agent.agent_id.clone());
        config.heartbeat_interval = options.heartbeat_interval;
        let client = Client::connect(config).await.map_err(|e| match e {
            ClientError::ConnectionRefused { .. } | ClientError::HandshakeTimeout => {
                SimError::BrokerUnreachable(e.to_string())
            }
            other => SimError::Publish {
                agent_id: agent.agent_id.clone(),
                message: other.to_string(),
            },
        })?;
        clients.push(client);
    }

    let base_ms = if options.virtual_clock {
        options.epoch_ms
    } else {
        SystemClock.now_ms()
    };
    let start = tokio::time::Instant::now();
    let speed = if options.speed > 0.0 { options.speed } else { 1.0 };

    let tasks: Vec<_> = clients
        .into_iter()
        .enumerate()
        .map(|(index, client)| {
            let spec = spec.clone();
            let virtual_clock = options.virtual_clock;
            tokio::spawn(async move {
                let plan = plan_agent(&spec, index);
                let result = publish_plan(
                    &client,
                    &spec.agents[index],
                    &plan,
                    base_ms,
                    start,
                    speed,
                    virtual_clock,
                )
                .await;
                client.close().await;
                result
            })
        })
        .collect();

    let mut report = RunReport::default();
    for (task, agent) in futures::future::join_all(tasks).await.into_iter().zip(&spec.agents) {
        let agent_report = task.map_err(|e| SimError::Publish {
            agent_id: agent.agent_id.clone(),
            message: e.to_string(),
        })??;
        report.agents.insert(agent.agent_id.clone(), agent_report);
    }
    tracing::info!(target: "smartrescue::sim", published = report.total(), agents = report.agents.len(), "scenario finished");
    Ok(report)
}

async fn publish_plan(
    client: &Client,
    agent: &AgentSpec,
    plan: &[PlannedEvent],
    base_ms: i64,
    start: tokio::time::Instant,
    speed: f64,
    virtual_clock: bool,
) -> Result<AgentReport, SimError> {
    let mut report = AgentReport::default();
    for planned in plan {
        let timestamp_ms = if virtual_clock {
            base_ms + planned.offset_ms
        } else {
            let due = start + Duration::from_secs_f64(planned.offset_ms as f64 / 1000.0 / speed);
            tokio::time::sleep_until(due).await;
            SystemClock.now_ms()
        };
        let mut event = client
            .stamp(planned.kind, planned.value, planned.position, timestamp_ms)
            .map_err(|e| publish_error(agent, e))?;
        event.activity = planned.activity;
        event.alert = planned.fall_impact_offset_ms.map(|t| EventAlert::Fall {
            impact_time_ms: if virtual_clock {
                base_ms + t
            } else {
                base_ms + (t as f64 / speed).round() as i64
            },
        });
        client.publish(&event).await.map_err(|e| publish_error(agent, e))?;
        report.published += 1;
        *report.per_kind.entry(planned.kind).or_insert(0) += 1;
        if event.alert.is_some() {
            report.fall_alerts += 1;
        }
    }
    Ok(report)
}

fn publish_error(agent: &AgentSpec, e: ClientError) -> SimError {
    SimError::Publish {
        agent_id: agent.agent_id.clone(),
        message: e.to_string(),
    }
}
