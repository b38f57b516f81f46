//! In-process fan-out load generator: P publishers, S match-all
//! subscribers, latency measured from the publisher's send call to the
//! subscriber's receipt on the same host clock.

use std::collections::{HashMap, HashSet};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;
use tokio::io::AsyncWriteExt;
use tokio::net::{TcpSocket, TcpStream};
use tokio::sync::watch;

use smartrescue_broker::{serve, BrokerConfig, BrokerHandle, BrokerSettings};
use smartrescue_client::{Client, ClientConfig, Delivery};
use smartrescue_core::model::{GeoPosition, SensorKind, SensorValue};
use smartrescue_core::protocol::{encode_frame, Frame, Role, Subscribe};
use smartrescue_core::SystemClock;

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct LoadtestConfig {
    pub publishers: usize,
    pub subscribers: usize,
    /// Events per second, per publisher.
    pub rate: f64,
    pub duration: Duration,
    /// Use this broker instead of starting one in-process.
    pub broker: Option<String>,
    /// Per-session queue capacity of the in-process broker.
    pub queue_cap: usize,
    /// Extra subscribers that complete the handshake and never read.
    pub stalled_subscribers: usize,
    /// How long to wait after the last publish for deliveries to arrive.
    pub drain_timeout: Duration,
}

impl Default for LoadtestConfig {
    fn default() -> Self {
        Self {
            publishers: 1,
            subscribers: 30,
            rate: 5.0,
            duration: Duration::from_secs(60),
            broker: None,
            queue_cap: smartrescue_broker::DEFAULT_QUEUE_CAP,
            stalled_subscribers: 0,
            drain_timeout: Duration::from_secs(3),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LatencySummary {
    pub samples: u64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LoadReport {
    pub publishers: usize,
    pub subscribers: usize,
    pub stalled_subscribers: usize,
    pub rate_per_publisher: f64,
    pub duration_s: f64,
    pub published: u64,
    /// `published × subscribers`, excluding stalled subscribers.
    pub expected_deliveries: u64,
    pub delivered: u64,
    pub lost: u64,
    pub delivery_rate: f64,
    /// Deliveries the broker dropped for slow consumers; known only for the
    /// in-process broker.
    pub broker_drops: Option<u64>,
    pub client_drops: u64,
    pub duplicates: u64,
    pub order_violations: u64,
    pub latency: LatencySummary,
    pub elapsed_s: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn summarize(mut latencies_ms: Vec<f64>) -> LatencySummary {
    latencies_ms.sort_by(f64::total_cmp);
    LatencySummary {
        samples: latencies_ms.len() as u64,
        p50_ms: percentile(&latencies_ms, 50.0),
        p95_ms: percentile(&latencies_ms, 95.0),
        p99_ms: percentile(&latencies_ms, 99.0),
        max_ms: latencies_ms.last().copied().unwrap_or(0.0),
    }
}

#[derive(Default)]
struct SubscriberTally {
    delivered: u64,
    duplicates: u64,
    order_violations: u64,
    latencies_ms: Vec<f64>,
}

type SendTimes = Arc<Mutex<HashMap<String, Instant>>>;

async fn collect(
    client: Client,
    mut sub: smartrescue_client::Subscription,
    sent: SendTimes,
    progress: Arc<AtomicU64>,
    mut stop: watch::Receiver<bool>,
) -> (SubscriberTally, u64) {
    let mut tally = SubscriberTally::default();
    let mut last_seq: HashMap<String, u64> = HashMap::new();
    let mut seen = HashSet::new();
    loop {
        let delivery = tokio::select! {
            d = sub.next() => d,
            _ = stop.changed() => break,
        };
        let Some(delivery) = delivery else { break };
        let Delivery::Event { event, .. } = delivery else {
            continue;
        };
        let received = Instant::now();
        let ev = event.event();
        if !seen.insert(ev.event_id.clone()) {
            tally.duplicates += 1;
            continue;
        }
        let last = last_seq.entry(ev.publisher_id.clone()).or_insert(0);
        if ev.seq <= *last {
            tally.order_violations += 1;
        }
        *last = ev.seq;
        if let Some(at) = sent.lock().unwrap().get(&ev.event_id) {
            tally
                .latencies_ms
                .push(received.duration_since(*at).as_secs_f64() * 1000.0);
        }
        tally.delivered += 1;
        progress.fetch_add(1, Ordering::Relaxed);
    }
    let drops = client.dropped_deliveries();
    client.close().await;
    (tally, drops)
}

/// Connect a subscriber that registers match-all and then never reads, so
/// the broker's queue for it fills up.
async fn stalled_subscriber(addr: SocketAddr, id: &str) -> std::io::Result<TcpStream> {
    let socket = if addr.is_ipv4() {
        TcpSocket::new_v4()?
    } else {
        TcpSocket::new_v6()?
    };
    socket.set_recv_buffer_size(4096)?;
    let mut stream = socket.connect(addr).await?;
    stream
        .write_all(encode_frame(&Frame::hello(id, Role::Subscriber)).as_bytes())
        .await?;
    let subscribe = Frame::Subscribe(Subscribe {
        request_id: 1,
        filter: String::new(),
    });
    stream.write_all(encode_frame(&subscribe).as_bytes()).await?;
    Ok(stream)
}

pub async fn run_loadtest(config: &LoadtestConfig) -> Result<LoadReport, CliError> {
    if config.publishers == 0 || config.rate.is_nan() || config.rate <= 0.0 {
        return Err(CliError::usage(
            "BAD_ARGUMENT",
            "need at least one publisher and a positive rate",
        ));
    }
    let embedded: Option<BrokerHandle> = match &config.broker {
        Some(_) => None,
        None => {
            let broker_config = BrokerConfig {
                bind: SocketAddr::from(([127, 0, 0, 1], 0)),
                settings: BrokerSettings {
                    queue_cap: config.queue_cap,
                    ..Default::default()
                },
                ..Default::default()
            };
            let handle = serve(broker_config, Arc::new(SystemClock))
                .await
                .map_err(|e| CliError::runtime("BIND_FAILED", e.to_string()))?;
            Some(handle)
        }
    };
    let address = match (&config.broker, &embedded) {
        (Some(a), _) => a.clone(),
        (None, Some(h)) => h.local_addr().to_string(),
        (None, None) => unreachable!(),
    };

    let sent: SendTimes = Arc::new(Mutex::new(HashMap::new()));
    let progress = Arc::new(AtomicU64::new(0));
    let (stop_tx, stop_rx) = watch::channel(false);

    let mut collectors = Vec::new();
    for i in 0..config.subscribers {
        let mut cc = ClientConfig::new(address.clone(), Role::Subscriber, format!("load-sub-{i}"));
        cc.stream_buffer = 65_536;
        let client = Client::connect(cc).await?;
        let sub = client.subscribe("").await?;
        collectors.push(tokio::spawn(collect(
            client,
            sub,
            sent.clone(),
            progress.clone(),
            stop_rx.clone(),
        )));
    }
    let mut stalled = Vec::new();
    if config.stalled_subscribers > 0 {
        let addr: SocketAddr = address
            .parse()
            .map_err(|_| CliError::usage("BAD_ARGUMENT", "stalled subscribers need a numeric broker address"))?;
        for i in 0..config.stalled_subscribers {
            let s = stalled_subscriber(addr, &format!("load-stalled-{i}"))
                .await
                .map_err(|e| CliError::runtime("BROKER_UNREACHABLE", e.to_string()))?;
            stalled.push(s);
        }
        // let the broker register the stalled subscriptions before traffic starts
        tokio::time::sleep(Duration::from_millis(100)).await;
    }

    let per_publisher = (config.rate * config.duration.as_secs_f64()).round() as u64;
    let period = Duration::from_secs_f64(1.0 / config.rate);
    let started = Instant::now();
    let mut publishers = Vec::new();
    for p in 0..config.publishers {
        let client = Client::connect(ClientConfig::new(
            address.clone(),
            Role::Publisher,
            format!("load-pub-{p}"),
        ))
        .await?;
        let sent = sent.clone();
        publishers.push(tokio::spawn(async move {
            let position = GeoPosition::new(60.0, 5.0, 5.0).expect("fixed position is valid");
            let mut ticker = tokio::time::interval(period);
            let mut published = 0u64;
            for i in 0..per_publisher {
                ticker.tick().await;
                let now_ms = smartrescue_core::Clock::now_ms(&SystemClock);
                let ev = client.stamp(SensorKind::Thermometer, SensorValue::Scalar(i as f64), position, now_ms)?;
                sent.lock().unwrap().insert(ev.event_id.clone(), Instant::now());
                client.publish(&ev).await?;
                published += 1;
            }
            client.close().await;
            Ok::<u64, smartrescue_client::ClientError>(published)
        }));
    }
    let mut published = 0;
    for task in publishers {
        published += task.await.expect("publisher task panicked")?;
    }

    let expected = published * config.subscribers as u64;
    let drain_deadline = Instant::now() + config.drain_timeout;
    while progress.load(Ordering::Relaxed) < expected && Instant::now() < drain_deadline {
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    let elapsed = started.elapsed();
    let _ = stop_tx.send(true);

    let mut delivered = 0;
    let mut duplicates = 0;
    let mut order_violations = 0;
    let mut client_drops = 0;
    let mut latencies = Vec::new();
    for c in collectors {
        let (tally, drops) = c.await.expect("subscriber task panicked");
        delivered += tally.delivered;
        duplicates += tally.duplicates;
        order_violations += tally.order_violations;
        client_drops += drops;
        latencies.extend(tally.latencies_ms);
    }
    drop(stalled);
    let broker_drops = embedded.as_ref().map(|h| h.router().metrics().drops);
    if let Some(h) = embedded {
        h.shutdown().await;
    }

    Ok(LoadReport {
        publishers: config.publishers,
        subscribers: config.subscribers,
        stalled_subscribers: config.stalled_subscribers,
        rate_per_publisher: config.rate,
        duration_s: config.duration.as_secs_f64(),
        published,
        expected_deliveries: expected,
        delivered,
        lost: expected.saturating_sub(delivered),
        delivery_rate: if expected == 0 {
            1.0
        } else {
            delivered as f64 / expected as f64
        },
        broker_drops,
        client_drops,
        duplicates,
        order_violations,
        latency: summarize(latencies),
        elapsed_s: elapsed.as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 95.0), 95.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&v, 100.0), 100.0);
        assert_eq!(percentile(&[7.0], 95.0), 7.0);
        assert_eq!(percentile(&[], 95.0), 0.0);
        let s = summarize(vec![3.0, 1.0, 2.0]);
        assert_eq!((s.p50_ms, s.max_ms, s.samples), (2.0, 3.0, 3));
    }
}
