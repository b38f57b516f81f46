//! Shared service state, the ingest path and the broker connection loop.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::Serialize;
use tokio::sync::broadcast;
use tokio::task::JoinHandle;

use smartrescue_client::{Client, ClientConfig, Delivery};
use smartrescue_core::model::{GeoPosition, PresenceState};
use smartrescue_core::protocol::{Presence, Role, WireEvent};

use crate::store::{AppendOutcome, EventStore, StoreCounters, StoreError};

/// Items buffered per live-stream client before the oldest are dropped.
pub const LIVE_BUFFER: usize = 1024;
pub const DEFAULT_CLIENT_ID: &str = "aggregator";

/// One item pushed to live-stream clients, in ingest order.
#[derive(Debug, Clone)]
pub enum LiveItem {
    Sensor(WireEvent),
    Presence(Presence),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PublisherRecord {
    pub publisher_id: String,
    pub state: PresenceState,
    pub last_seen_ms: i64,
    pub last_position: Option<GeoPosition>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ServiceStats {
    #[serde(flatten)]
    pub store: StoreCounters,
    pub presence_updates: u64,
    pub publishers: u64,
    pub stream_clients: u64,
    pub stream_drops: u64,
    pub store_errors: u64,
}

pub struct Aggregator {
    store: RwLock<EventStore>,
    presence: RwLock<BTreeMap<String, PublisherRecord>>,
    live: broadcast::Sender<LiveItem>,
    presence_updates: AtomicU64,
    stream_drops: AtomicU64,
    store_errors: AtomicU64,
}

impl Aggregator {
    pub fn new(store: EventStore) -> Arc<Self> {
        let (live, _) = broadcast::channel(LIVE_BUFFER);
        let mut presence = BTreeMap::new();
        // seed the publisher list from what the log already holds
        for e in store.iter() {
            let ev = &e.event;
            let rec = presence
                .entry(ev.publisher_id.clone())
                .or_insert_with(|| PublisherRecord {
                    publisher_id: ev.publisher_id.clone(),
                    state: PresenceState::Gone,
                    last_seen_ms: ev.timestamp_ms,
                    last_position: Some(ev.position),
                });
            if ev.timestamp_ms >= rec.last_seen_ms {
                rec.last_seen_ms = ev.timestamp_ms;
                rec.last_position = Some(ev.position);
            }
        }
        Arc::new(Self {
            store: RwLock::new(store),
            presence: RwLock::new(presence),
            live,
            presence_updates: AtomicU64::new(0),
            stream_drops: AtomicU64::new(0),
            store_errors: AtomicU64::new(0),
        })
    }

    pub fn open(path: impl AsRef<Path>, cap: usize) -> Result<Arc<Self>, StoreError> {
        Ok(Self::new(EventStore::open(path, cap)?))
    }

    /// Read access to the store for queries.
    pub fn store(&self) -> std::sync::RwLockReadGuard<'_, EventStore> {
        self.store.read().unwrap()
    }

    /// Store an event and push it to live streams. Duplicates are counted and
    /// not pushed again.
    pub fn ingest_event(&self, wire: WireEvent) -> Result<AppendOutcome, StoreError> {
        let outcome = self.store.write().unwrap().append(&wire);
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                self.store_errors.fetch_add(1, Ordering::Relaxed);
                tracing::error!(target: "smartrescue::aggregate", error = %e, "store append failed");
                return Err(e);
            }
        };
        if let AppendOutcome::Stored(_) = outcome {
            let ev = wire.event();
            {
                let mut presence = self.presence.write().unwrap();
                let rec = presence
                    .entry(ev.publisher_id.clone())
                    .or_insert_with(|| PublisherRecord {
                        publisher_id: ev.publisher_id.clone(),
                        state: PresenceState::Fresh,
                        last_seen_ms: ev.timestamp_ms,
                        last_position: Some(ev.position),
                    });
                rec.state = PresenceState::Fresh;
                if ev.timestamp_ms >= rec.last_seen_ms {
                    rec.last_seen_ms = ev.timestamp_ms;
                    rec.last_position = Some(ev.position);
                }
            }
            let _ = self.live.send(LiveItem::Sensor(wire));
        }
        Ok(outcome)
    }

    pub fn ingest_presence(&self, p: Presence) {
        {
            let mut presence = self.presence.write().unwrap();
            let rec = presence
                .entry(p.publisher_id.clone())
                .or_insert_with(|| PublisherRecord {
                    publisher_id: p.publisher_id.clone(),
                    state: p.state,
                    last_seen_ms: p.last_seen_ms,
                    last_position: p.position,
                });
            rec.state = p.state;
            rec.last_seen_ms = rec.last_seen_ms.max(p.last_seen_ms);
            if p.position.is_some() {
                rec.last_position = p.position;
            }
        }
        self.presence_updates.fetch_add(1, Ordering::Relaxed);
        let _ = self.live.send(LiveItem::Presence(p));
    }

    pub fn ingest(&self, delivery: Delivery) {
        match delivery {
            Delivery::Event { event, .. } => {
                let _ = self.ingest_event(event);
            }
            Delivery::Presence(p) => self.ingest_presence(p),
        }
    }

    pub fn publishers(&self) -> Vec<PublisherRecord> {
        self.presence.read().unwrap().values().cloned().collect()
    }

    pub fn publisher(&self, id: &str) -> Option<PublisherRecord> {
        self.presence.read().unwrap().get(id).cloned()
    }

    pub fn subscribe_live(&self) -> broadcast::Receiver<LiveItem> {
        self.live.subscribe()
    }

    pub(crate) fn count_stream_drops(&self, n: u64) {
        self.stream_drops.fetch_add(n, Ordering::Relaxed);
    }

    pub fn stats(&self) -> ServiceStats {
        ServiceStats {
            store: self.store().counters(),
            presence_updates: self.presence_updates.load(Ordering::Relaxed),
            publishers: self.presence.read().unwrap().len() as u64,
            stream_clients: self.live.receiver_count() as u64,
            stream_drops: self.stream_drops.load(Ordering::Relaxed),
            store_errors: self.store_errors.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub broker_address: String,
    pub client_id: String,
    /// Client-side buffer between the socket reader and the ingest loop.
    pub stream_buffer: usize,
    pub reconnect_min: Duration,
    pub reconnect_max: Duration,
}

impl IngestConfig {
    pub fn new(broker_address: impl Into<String>) -> Self {
        Self {
            broker_address: broker_address.into(),
            client_id: DEFAULT_CLIENT_ID.into(),
            stream_buffer: 65_536,
            reconnect_min: Duration::from_millis(500),
            reconnect_max: Duration::from_secs(10),
        }
    }
}

/// Connect once and subscribe match-all. The returned future ingests until
/// the connection ends.
pub async fn connect_once(
    aggregator: Arc<Aggregator>,
    config: &IngestConfig,
) -> Result<impl std::future::Future<Output = ()>, smartrescue_client::ClientError> {
    let mut cc = ClientConfig::new(
        config.broker_address.clone(),
        Role::Subscriber,
        config.client_id.clone(),
    );
    cc.stream_buffer = config.stream_buffer;
    let client = Client::connect(cc).await?;
    let mut sub = client.subscribe("").await?;
    tracing::info!(target: "smartrescue::aggregate", broker = %config.broker_address, "subscribed match-all");
    Ok(async move {
        while let Some(d) = sub.next().await {
            aggregator.ingest(d);
        }
        let dropped = client.dropped_deliveries();
        if dropped > 0 {
            tracing::warn!(target: "smartrescue::aggregate", dropped, "client buffer dropped deliveries");
        }
        client.close().await;
        tracing::warn!(target: "smartrescue::aggregate", "broker connection ended");
    })
}

/// Keep a match-all subscription alive, reconnecting with backoff whenever
/// the broker goes away.
pub fn spawn_ingest(aggregator: Arc<Aggregator>, config: IngestConfig) -> JoinHandle<()> {
    tokio::spawn(async move {
        let mut backoff = config.reconnect_min;
        loop {
            match connect_once(aggregator.clone(), &config).await {
                Ok(run) => {
                    backoff = config.reconnect_min;
                    run.await;
                }
                Err(e) => {
                    tracing::warn!(target: "smartrescue::aggregate", error = %e, retry_in_ms = backoff.as_millis() as u64, "cannot reach broker");
                }
            }
            tokio::time::sleep(backoff).await;
            backoff = (backoff * 2).min(config.reconnect_max);
        }
    })
}
