use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::json;

use smartrescue_aggregate::{serve_http, spawn_ingest, Aggregator, ApiConfig, IngestConfig};
use smartrescue_broker::{serve, serve_stats, BrokerConfig, BrokerSettings};
use smartrescue_client::{Client, ClientConfig, Delivery};
use smartrescue_core::model::{GeoPosition, SensorKind, SensorValue};
use smartrescue_core::predicate::Predicate;
use smartrescue_core::protocol::{encode_frame, Frame, Role, WireEvent};
use smartrescue_core::{Clock, SystemClock};
use smartrescue_sim::{run_scenario, RunOptions, ScenarioSpec};

use crate::args::{AggregateArgs, BrokerArgs, LoadtestArgs, PublishArgs, SimulateArgs, SubscribeArgs};
use crate::error::CliError;
use crate::loadtest::{run_loadtest, LoadtestConfig};

/// Resolves on SIGINT, or SIGTERM on unix.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    {
        let mut term =
            tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("install SIGTERM handler");
        tokio::select! {
            _ = ctrl_c => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    ctrl_c.await;
}

/// Write one line to stdout. A closed pipe is not an error worth reporting.
fn emit(line: &str) -> bool {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").and_then(|_| out.flush()).is_ok()
}

fn socket_addr(host: &str, port: u16) -> Result<SocketAddr, CliError> {
    format!("{host}:{port}")
        .parse()
        .or_else(|_| format!("[{host}]:{port}").parse())
        .map_err(|_| CliError::usage("BAD_ARGUMENT", format!("cannot parse bind address {host:?}")))
}

pub async fn broker(args: BrokerArgs) -> Result<(), CliError> {
    let config = BrokerConfig {
        bind: socket_addr(&args.bind, args.port)?,
        settings: BrokerSettings {
            queue_cap: args.queue_cap,
            max_subscriptions: args.max_subscriptions,
            ..Default::default()
        },
        ..Default::default()
    };
    let handle = serve(config, Arc::new(SystemClock)).await.map_err(|e| {
        CliError::runtime(
            "BIND_FAILED",
            format!("cannot listen on {}:{}: {e}", args.bind, args.port),
        )
    })?;
    let (stats_tx, stats_rx) = tokio::sync::oneshot::channel::<()>();
    let mut stats_address = None;
    let mut stats_task = None;
    if let Some(port) = args.stats_port {
        let bind = socket_addr(&args.bind, port)?;
        let shutdown = async move {
            let _ = stats_rx.await;
        };
        match serve_stats(bind, handle.router().clone(), shutdown).await {
            Ok((addr, task)) => {
                stats_address = Some(addr.to_string());
                stats_task = Some(task);
            }
            Err(e) => {
                handle.shutdown().await;
                return Err(CliError::runtime(
                    "BIND_FAILED",
                    format!("cannot listen on stats port {port}: {e}"),
                ));
            }
        }
    }
    emit(
        &json!({"event": "listening", "address": handle.local_addr().to_string(), "stats_address": stats_address})
            .to_string(),
    );

    shutdown_signal().await;
    tracing::info!(target: "smartrescue::cli", "interrupt received, shutting down");
    let _ = stats_tx.send(());
    handle.shutdown().await;
    if let Some(task) = stats_task {
        let _ = task.await;
    }
    Ok(())
}

fn parse_value(kind: SensorKind, text: &str) -> Result<SensorValue, CliError> {
    let bad = || CliError::usage("BAD_ARGUMENT", format!("cannot parse value {text:?} for {kind}"));
    if kind == SensorKind::Accelerometer {
        let parts: Vec<f64> = text
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        let v: [f64; 3] = parts.try_into().map_err(|_| bad())?;
        Ok(SensorValue::Vector(v))
    } else {
        text.trim().parse().map(SensorValue::Scalar).map_err(|_| bad())
    }
}

pub async fn publish(args: PublishArgs) -> Result<(), CliError> {
    if let Some(path) = &args.from_file {
        return replay(&args.broker, path, args.speed).await;
    }
    let kind_text = args.kind.as_deref().unwrap_or_default();
    let kind = SensorKind::parse_loose(kind_text)
        .ok_or_else(|| CliError::usage("BAD_ARGUMENT", format!("unknown sensor kind {kind_text:?}")))?;
    let value = parse_value(kind, args.value.as_deref().unwrap_or_default())?;
    let position = GeoPosition::new(
        args.lat.unwrap_or_default(),
        args.lon.unwrap_or_default(),
        args.accuracy,
    )
    .map_err(|e| CliError::usage("EVENT_INVALID", e.to_string()))?;
    let client = Client::connect(ClientConfig::new(
        args.broker.clone(),
        Role::Publisher,
        args.client_id.clone(),
    ))
    .await?;
    let ts = args.timestamp_ms.unwrap_or_else(|| SystemClock.now_ms());
    let result = async {
        let ev = client.stamp(kind, value, position, ts)?;
        client.publish(&ev).await?;
        Ok::<_, smartrescue_client::ClientError>(ev)
    }
    .await;
    client.close().await;
    let ev = result?;
    emit(&json!({"published": 1, "event_id": ev.event_id}).to_string());
    Ok(())
}

/// Replay event lines. Each distinct publisher gets its own
/// session; gaps between recorded timestamps are divided by `speed`.
async fn replay(broker: &str, path: &std::path::Path, speed: f64) -> Result<(), CliError> {
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(CliError::usage("BAD_ARGUMENT", "--speed must be positive"));
    }
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::usage("BAD_ARGUMENT", format!("cannot open {}: {e}", path.display())))?;
    let mut events = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::runtime("IO_ERROR", e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let wire = WireEvent::from_raw(line.trim_end())
            .map_err(|e| CliError::usage("EVENT_INVALID", format!("{}:{}: {e}", path.display(), n + 1)))?;
        events.push(wire.into_event());
    }

    let mut clients: HashMap<String, Client> = HashMap::new();
    for ev in &events {
        if !clients.contains_key(&ev.publisher_id) {
            let config = ClientConfig::new(broker.to_string(), Role::Publisher, ev.publisher_id.clone());
            clients.insert(ev.publisher_id.clone(), Client::connect(config).await?);
        }
    }
    let started = tokio::time::Instant::now();
    let first_ts = events.first().map(|e| e.timestamp_ms).unwrap_or_default();
    let mut published = 0u64;
    let mut failure = None;
    for ev in &events {
        let offset_ms = (ev.timestamp_ms - first_ts).max(0) as f64 / speed;
        tokio::time::sleep_until(started + Duration::from_secs_f64(offset_ms / 1000.0)).await;
        if let Err(e) = clients[&ev.publisher_id].publish(ev).await {
            failure = Some(e);
            break;
        }
        published += 1;
    }
    for client in clients.values() {
        client.close().await;
    }
    if let Some(e) = failure {
        return Err(e.into());
    }
    emit(&json!({"published": published, "publishers": clients.len()}).to_string());
    Ok(())
}

pub async fn subscribe(args: SubscribeArgs) -> Result<(), CliError> {
    // reject a bad filter before touching the network
    Predicate::parse(&args.filter).map_err(|e| CliError::usage("INVALID_PREDICATE", e.to_string()))?;
    let client_id = args
        .client_id
        .clone()
        .unwrap_or_else(|| format!("cli-subscriber-{}", std::process::id()));
    let client = Client::connect(ClientConfig::new(args.broker.clone(), Role::Subscriber, client_id)).await?;
    let mut sub = client.subscribe(&args.filter).await?;
    let mut printed = 0u64;
    let interrupted = shutdown_signal();
    tokio::pin!(interrupted);
    let outcome = loop {
        if args.count.is_some_and(|n| printed >= n) {
            break Ok(());
        }
        let delivery = tokio::select! {
            d = sub.next() => d,
            _ = &mut interrupted => break Ok(()),
        };
        let line = match delivery {
            Some(Delivery::Event { event, .. }) => {
                printed += 1;
                event.raw().to_string()
            }
            Some(Delivery::Presence(p)) if args.presence => encode_frame(&Frame::Presence(p)).trim_end().to_string(),
            Some(Delivery::Presence(_)) => continue,
            None => break Err(CliError::runtime("SESSION_CLOSED", "broker closed the connection")),
        };
        if !emit(&line) {
            break Ok(());
        }
    };
    client.close().await;
    outcome
}

pub async fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut spec = ScenarioSpec::load(&args.scenario)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if !(args.speed > 0.0 && args.speed.is_finite()) {
        return Err(CliError::usage("BAD_ARGUMENT", "--speed must be positive"));
    }
    let options = RunOptions {
        virtual_clock: args.virtual_clock,
        speed: args.speed,
        ..Default::default()
    };
    let report = tokio::select! {
        r = run_scenario(&spec, &args.broker, &options) => r?,
        _ = shutdown_signal() => return Err(CliError::runtime("INTERRUPTED", "simulation interrupted")),
    };
    emit(
        &json!({"agents": report.agents, "total": report.total(), "total_by_kind": report.total_by_kind()}).to_string(),
    );
    Ok(())
}

pub async fn aggregate(args: AggregateArgs) -> Result<(), CliError> {
    let aggregator =
        Aggregator::open(&args.store, args.cap).map_err(|e| CliError::runtime("STORE_ERROR", e.to_string()))?;
    let bind = socket_addr(&args.http_bind, args.http_port)?;
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let shutdown = async move {
        let _ = stop_rx.await;
    };
    let config = ApiConfig {
        ui_dir: args.ui_dir.clone(),
    };
    let (addr, http) = serve_http(bind, aggregator.clone(), config, shutdown)
        .await
        .map_err(|e| CliError::runtime("BIND_FAILED", format!("cannot listen on {bind}: {e}")))?;
    let mut ingest_config = IngestConfig::new(args.broker.clone());
    ingest_config.client_id = args.client_id.clone();
    let ingest = spawn_ingest(aggregator.clone(), ingest_config);
    emit(&json!({"event": "listening", "http_address": addr.to_string(), "broker": args.broker, "stored": aggregator.store().len()}).to_string());

    shutdown_signal().await;
    tracing::info!(target: "smartrescue::cli", "interrupt received, shutting down");
    ingest.abort();
    let _ = stop_tx.send(());
    let _ = tokio::time::timeout(Duration::from_secs(3), http).await;
    Ok(())
}

pub async fn loadtest(args: LoadtestArgs) -> Result<(), CliError> {
    for (name, v) in [("duration", args.duration), ("drain-timeout", args.drain_timeout)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(CliError::usage(
                "BAD_ARGUMENT",
                format!("--{name} must be a non-negative number of seconds"),
            ));
        }
    }
    let config = LoadtestConfig {
        publishers: args.publishers,
        subscribers: args.subscribers,
        rate: args.rate,
        duration: Duration::from_secs_f64(args.duration),
        broker: args.broker,
        queue_cap: args.queue_cap,
        stalled_subscribers: args.stalled,
        drain_timeout: Duration::from_secs_f64(args.drain_timeout),
    };
    let started = Instant::now();
    let report = run_loadtest(&config).await?;
    tracing::info!(target: "smartrescue::cli", elapsed_ms = started.elapsed().as_millis() as u64, "loadtest finished");
    emit(&serde_json::to_string(&report).expect("report serializes"));
    Ok(())
}
