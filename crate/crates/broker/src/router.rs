//! Transport-independent broker state: sessions, the subscription registry,
//! publisher presence and event routing.
//!
//! Every session owns a bounded outbound queue of encoded frame lines. Routing
//! never blocks: a full queue drops the frame for that subscriber only.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::Serialize;
use thiserror::Error;
use tokio::sync::mpsc;

use smartrescue_core::model::{validate_id, PresenceState, PublisherPresence};
use smartrescue_core::predicate::{ParseError, Predicate, SubscriptionPredicate};
use smartrescue_core::protocol::{encode_frame, encode_notify, Frame, Presence, Role, WireEvent};
use smartrescue_core::Clock;

pub type SessionId = u64;
/// One encoded frame line, shared between every queue it is pushed to.
pub type Outbound = Arc<str>;

pub const DEFAULT_QUEUE_CAP: usize = 1024;
pub const MAX_SUBSCRIPTIONS_PER_SESSION: usize = 64;
pub const HEARTBEAT_INTERVAL_MS: i64 = 5_000;
pub const STALE_AFTER_MS: i64 = 15_000;
pub const GONE_AFTER_MS: i64 = 60_000;

#[derive(Debug, Clone)]
pub struct BrokerSettings {
    pub queue_cap: usize,
    pub max_subscriptions: usize,
    pub stale_after_ms: i64,
    pub gone_after_ms: i64,
}

impl Default for BrokerSettings {
    fn default() -> Self {
        Self {
            queue_cap: DEFAULT_QUEUE_CAP,
            max_subscriptions: MAX_SUBSCRIPTIONS_PER_SESSION,
            stale_after_ms: STALE_AFTER_MS,
            gone_after_ms: GONE_AFTER_MS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegistryEntry {
    pub subscription_id: String,
    pub session: SessionId,
    pub predicate: Predicate,
}

/// An immutable view of the registry. Updates swap in a new snapshot, so a
/// reader holding one never sees a half-applied change.
pub type RegistrySnapshot = Arc<Vec<RegistryEntry>>;

pub fn snapshot_predicates(snapshot: &[RegistryEntry]) -> Vec<SubscriptionPredicate> {
    snapshot
        .iter()
        .map(|e| SubscriptionPredicate::new(e.subscription_id.clone(), e.predicate.clone()))
        .collect()
}

#[derive(Debug)]
struct SessionEntry {
    client_id: String,
    role: Role,
    tx: mpsc::Sender<Outbound>,
    subscriptions: Vec<String>,
    connected_at_ms: i64,
    /// Set while the session's queue is overflowing, so the warning is
    /// logged once per overflow episode rather than per event.
    overflowing: AtomicBool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionInfo {
    pub session: SessionId,
    pub client_id: String,
    pub role: Role,
    pub subscriptions: Vec<String>,
    pub connected_at_ms: i64,
}

#[derive(Debug, Clone)]
pub struct DeliveryReport {
    /// Registry view the event was matched against.
    pub snapshot: RegistrySnapshot,
    pub delivered: Vec<SessionId>,
    /// Subscribers whose queue was full (slow consumers).
    pub dropped: Vec<SessionId>,
}

impl DeliveryReport {
    pub fn delivered_count(&self) -> usize {
        self.delivered.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PresenceTransition {
    pub publisher_id: String,
    pub from: Option<PresenceState>,
    pub to: PresenceState,
    pub at_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("unknown session")]
    UnknownSession,
    #[error("invalid client id: {0}")]
    InvalidClientId(String),
    #[error("broker is shutting down")]
    ShuttingDown,
    #[error("session is not a subscriber")]
    NotASubscriber,
    #[error("session is not a publisher")]
    NotAPublisher,
    #[error("invalid predicate: {0}")]
    InvalidPredicate(#[from] ParseError),
    #[error("session already holds {0} subscriptions")]
    TooManySubscriptions(usize),
    #[error("unknown subscription {0:?}")]
    UnknownSubscription(String),
    #[error("event publisher_id {event:?} does not match session client id {session:?}")]
    IdentityMismatch { event: String, session: String },
}

#[derive(Debug, Default)]
pub struct Metrics {
    events_routed: AtomicU64,
    deliveries: AtomicU64,
    drops: AtomicU64,
    presence_broadcasts: AtomicU64,
    sessions_opened: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MetricsSnapshot {
    pub events_routed: u64,
    pub deliveries: u64,
    pub drops: u64,
    pub active_sessions: u64,
    pub subscriptions: u64,
    pub presence_broadcasts: u64,
    pub sessions_opened: u64,
}

pub struct Router {
    settings: BrokerSettings,
    clock: Arc<dyn Clock>,
    next_session: AtomicU64,
    next_subscription: AtomicU64,
    sessions: RwLock<HashMap<SessionId, SessionEntry>>,
    registry: RwLock<RegistrySnapshot>,
    presence: Mutex<BTreeMap<String, PublisherPresence>>,
    shutting_down: std::sync::atomic::AtomicBool,
    metrics: Metrics,
}

impl Router {
    pub fn new(settings: BrokerSettings, clock: Arc<dyn Clock>) -> Self {
        Self {
            settings,
            clock,
            next_session: AtomicU64::new(1),
            next_subscription: AtomicU64::new(1),
            sessions: RwLock::new(HashMap::new()),
            registry: RwLock::new(Arc::new(Vec::new())),
            presence: Mutex::new(BTreeMap::new()),
            shutting_down: Default::default(),
            metrics: Metrics::default(),
        }
    }

    pub fn settings(&self) -> &BrokerSettings {
        &self.settings
    }

    pub fn now_ms(&self) -> i64 {
        self.clock.now_ms()
    }

    /// Register a session after a successful handshake. The returned receiver
    /// yields every line queued for the session.
    pub fn open_session(
        &self,
        client_id: &str,
        role: Role,
    ) -> Result<(SessionId, mpsc::Receiver<Outbound>), SessionError> {
        if self.shutting_down.load(Ordering::SeqCst) {
            return Err(SessionError::ShuttingDown);
        }
        validate_id("client_id", client_id).map_err(|e| SessionError::InvalidClientId(e.to_string()))?;
        let id = self.next_session.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = mpsc::channel(self.settings.queue_cap.max(1));
        let now = self.clock.now_ms();
        self.sessions.write().unwrap().insert(
            id,
            SessionEntry {
                client_id: client_id.to_string(),
                role,
                tx,
                subscriptions: Vec::new(),
                connected_at_ms: now,
                overflowing: AtomicBool::new(false),
            },
        );
        self.metrics.sessions_opened.fetch_add(1, Ordering::Relaxed);
        tracing::info!(
            target: "smartrescue::broker",
            event = "session_open",
            session = id,
            client_id,
            role = %role
        );
        if role.can_publish() {
            self.touch_presence(client_id, None, now);
        }
        Ok((id, rx))
    }

    /// Sender for control replies (acks, errors) on a session's queue.
    pub fn sender(&self, session: SessionId) -> Option<mpsc::Sender<Outbound>> {
        self.sessions.read().unwrap().get(&session).map(|s| s.tx.clone())
    }

    pub fn session_info(&self, session: SessionId) -> Option<SessionInfo> {
        self.sessions.read().unwrap().get(&session).map(|s| SessionInfo {
            session,
            client_id: s.client_id.clone(),
            role: s.role,
            subscriptions: s.subscriptions.clone(),
            connected_at_ms: s.connected_at_ms,
        })
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        self.registry.read().unwrap().clone()
    }

    pub fn subscribe(&self, session: SessionId, filter: &str) -> Result<String, SessionError> {
        let predicate = Predicate::parse(filter)?;
        let mut sessions = self.sessions.write().unwrap();
        let entry = sessions.get_mut(&session).ok_or(SessionError::UnknownSession)?;
        if !entry.role.can_subscribe() {
            return Err(SessionError::NotASubscriber);
        }
        if entry.subscriptions.len() >= self.settings.max_subscriptions {
            return Err(SessionError::TooManySubscriptions(entry.subscriptions.len()));
        }
        let subscription_id = format!("sub-{}", self.next_subscription.fetch_add(1, Ordering::SeqCst));
        {
            let mut registry = self.registry.write().unwrap();
            let mut next = Vec::with_capacity(registry.len() + 1);
            next.extend(registry.iter().cloned());
            next.push(RegistryEntry {
                subscription_id: subscription_id.clone(),
                session,
                predicate,
            });
            *registry = Arc::new(next);
        }
        entry.subscriptions.push(subscription_id.clone());
        tracing::info!(
            target: "smartrescue::broker",
            event = "subscribe",
            session,
            subscription_id = %subscription_id,
            filter
        );
        Ok(subscription_id)
    }

    pub fn unsubscribe(&self, session: SessionId, subscription_id: &str) -> Result<(), SessionError> {
        let mut sessions = self.sessions.write().unwrap();
        let entry = sessions.get_mut(&session).ok_or(SessionError::UnknownSession)?;
        let Some(pos) = entry.subscriptions.iter().position(|s| s == subscription_id) else {
            return Err(SessionError::UnknownSubscription(subscription_id.to_string()));
        };
        entry.subscriptions.remove(pos);
        let mut registry = self.registry.write().unwrap();
        *registry = Arc::new(
            registry
                .iter()
                .filter(|e| e.subscription_id != subscription_id)
                .cloned()
                .collect(),
        );
        tracing::info!(
            target: "smartrescue::broker",
            event = "unsubscribe",
            session,
            subscription_id
        );
        Ok(())
    }

    /// Accept an event from a publishing session and route it.
    pub fn publish(&self, session: SessionId, event: &WireEvent) -> Result<DeliveryReport, SessionError> {
        let client_id = {
            let sessions = self.sessions.read().unwrap();
            let entry = sessions.get(&session).ok_or(SessionError::UnknownSession)?;
            if !entry.role.can_publish() {
                return Err(SessionError::NotAPublisher);
            }
            if entry.client_id != event.event().publisher_id {
                return Err(SessionError::IdentityMismatch {
                    event: event.event().publisher_id.clone(),
                    session: entry.client_id.clone(),
                });
            }
            entry.client_id.clone()
        };
        self.touch_presence(&client_id, Some(event.event().position), self.clock.now_ms());
        Ok(self.route(event, session))
    }

    /// Queue a NOTIFY for every other session with a matching subscription.
    pub fn route(&self, event: &WireEvent, from: SessionId) -> DeliveryReport {
        let snapshot = self.snapshot();
        let mut targets: BTreeMap<SessionId, Vec<String>> = BTreeMap::new();
        for entry in snapshot.iter() {
            if entry.session != from && entry.predicate.matches(event.event()) {
                targets
                    .entry(entry.session)
                    .or_default()
                    .push(entry.subscription_id.clone());
            }
        }

        let mut delivered = Vec::with_capacity(targets.len());
        let mut dropped = Vec::new();
        {
            let sessions = self.sessions.read().unwrap();
            for (session, ids) in targets {
                let Some(entry) = sessions.get(&session) else {
                    continue;
                };
                let line: Outbound = encode_notify(&ids, event.raw()).into();
                match entry.tx.try_send(line) {
                    Ok(()) => {
                        if entry.overflowing.swap(false, Ordering::Relaxed) {
                            tracing::info!(target: "smartrescue::broker", event = "slow_consumer_recovered", session, client_id = %entry.client_id);
                        }
                        delivered.push(session);
                    }
                    Err(mpsc::error::TrySendError::Full(_)) => {
                        if !entry.overflowing.swap(true, Ordering::Relaxed) {
                            tracing::warn!(target: "smartrescue::broker", event = "slow_consumer", session, client_id = %entry.client_id, first_dropped = %event.event().event_id);
                        }
                        dropped.push(session);
                    }
                    Err(mpsc::error::TrySendError::Closed(_)) => {}
                }
            }
        }

        self.metrics.events_routed.fetch_add(1, Ordering::Relaxed);
        self.metrics
            .deliveries
            .fetch_add(delivered.len() as u64, Ordering::Relaxed);
        self.metrics.drops.fetch_add(dropped.len() as u64, Ordering::Relaxed);
        tracing::debug!(
            target: "smartrescue::broker",
            event = "route",
            event_id = %event.event().event_id,
            delivered = delivered.len(),
            dropped = dropped.len()
        );
        DeliveryReport {
            snapshot,
            delivered,
            dropped,
        }
    }

    /// Record a heartbeat from a publishing session.
    pub fn heartbeat(&self, session: SessionId) -> Result<(), SessionError> {
        let client_id = {
            let sessions = self.sessions.read().unwrap();
            let entry = sessions.get(&session).ok_or(SessionError::UnknownSession)?;
            if !entry.role.can_publish() {
                return Ok(());
            }
            entry.client_id.clone()
        };
        self.touch_presence(&client_id, None, self.clock.now_ms());
        Ok(())
    }

    fn touch_presence(&self, publisher_id: &str, position: Option<smartrescue_core::GeoPosition>, now: i64) {
        let transition = {
            let mut table = self.presence.lock().unwrap();
            match table.get_mut(publisher_id) {
                Some(record) => {
                    record.last_seen_ms = now;
                    if position.is_some() {
                        record.last_position = position;
                    }
                    if record.stale {
                        record.stale = false;
                        Some((Some(PresenceState::Stale), record.clone()))
                    } else {
                        None
                    }
                }
                None => {
                    let record = PublisherPresence {
                        publisher_id: publisher_id.to_string(),
                        last_seen_ms: now,
                        last_position: position,
                        stale: false,
                    };
                    table.insert(publisher_id.to_string(), record.clone());
                    Some((None, record))
                }
            }
        };
        if let Some((from, record)) = transition {
            self.broadcast_presence(&record, from, PresenceState::Fresh, now);
        }
    }

    /// Mark silent publishers stale and drop long-silent ones, broadcasting
    /// one PRESENCE frame per transition.
    pub fn heartbeat_scan(&self, now_ms: i64) -> Vec<PresenceTransition> {
        let mut changes = Vec::new();
        {
            let mut table = self.presence.lock().unwrap();
            let mut gone = Vec::new();
            for (id, record) in table.iter_mut() {
                let silent = now_ms - record.last_seen_ms;
                if !record.stale && silent > self.settings.stale_after_ms {
                    record.stale = true;
                    changes.push((record.clone(), Some(PresenceState::Fresh), PresenceState::Stale));
                }
                if silent > self.settings.gone_after_ms {
                    gone.push(id.clone());
                    changes.push((record.clone(), Some(PresenceState::Stale), PresenceState::Gone));
                }
            }
            for id in gone {
                table.remove(&id);
            }
        }
        changes
            .into_iter()
            .map(|(record, from, to)| self.broadcast_presence(&record, from, to, now_ms))
            .collect()
    }

    fn broadcast_presence(
        &self,
        record: &PublisherPresence,
        from: Option<PresenceState>,
        to: PresenceState,
        now_ms: i64,
    ) -> PresenceTransition {
        let line: Outbound = encode_frame(&Frame::Presence(Presence {
            publisher_id: record.publisher_id.clone(),
            state: to,
            last_seen_ms: record.last_seen_ms,
            position: record.last_position,
        }))
        .into();
        let mut drops = 0u64;
        for entry in self.sessions.read().unwrap().values() {
            if entry.role.can_subscribe() && entry.client_id != record.publisher_id {
                if let Err(mpsc::error::TrySendError::Full(_)) = entry.tx.try_send(line.clone()) {
                    drops += 1;
                }
            }
        }
        self.metrics.drops.fetch_add(drops, Ordering::Relaxed);
        self.metrics.presence_broadcasts.fetch_add(1, Ordering::Relaxed);
        tracing::info!(
            target: "smartrescue::broker",
            event = "presence",
            publisher_id = %record.publisher_id,
            from = ?from,
            to = ?to
        );
        PresenceTransition {
            publisher_id: record.publisher_id.clone(),
            from,
            to,
            at_ms: now_ms,
        }
    }

    pub fn presence(&self) -> Vec<PublisherPresence> {
        self.presence.lock().unwrap().values().cloned().collect()
    }

    /// End a session. Its subscriptions disappear in one registry swap. A
    /// graceful close (BYE) of a publisher announces it gone immediately; an
    /// abrupt close leaves presence to age out.
    pub fn close_session(&self, session: SessionId, graceful: bool) {
        {
            let mut registry = self.registry.write().unwrap();
            if registry.iter().any(|e| e.session == session) {
                *registry = Arc::new(registry.iter().filter(|e| e.session != session).cloned().collect());
            }
        }
        let Some(entry) = self.sessions.write().unwrap().remove(&session) else {
            return;
        };
        tracing::info!(
            target: "smartrescue::broker",
            event = "session_close",
            session,
            client_id = %entry.client_id,
            graceful
        );
        if graceful && entry.role.can_publish() {
            let record = self.presence.lock().unwrap().remove(&entry.client_id);
            if let Some(record) = record {
                let from = Some(if record.stale {
                    PresenceState::Stale
                } else {
                    PresenceState::Fresh
                });
                self.broadcast_presence(&record, from, PresenceState::Gone, self.clock.now_ms());
            }
        }
    }

    /// Announce every known publisher gone, refuse new sessions and drop all
    /// session queues so their writers can drain and close.
    pub fn shutdown(&self) -> Vec<PresenceTransition> {
        self.shutting_down.store(true, Ordering::SeqCst);
        let now = self.clock.now_ms();
        let records: Vec<PublisherPresence> = std::mem::take(&mut *self.presence.lock().unwrap())
            .into_values()
            .collect();
        let transitions = records
            .iter()
            .map(|r| {
                let from = if r.stale {
                    PresenceState::Stale
                } else {
                    PresenceState::Fresh
                };
                self.broadcast_presence(r, Some(from), PresenceState::Gone, now)
            })
            .collect();
        *self.registry.write().unwrap() = Arc::new(Vec::new());
        self.sessions.write().unwrap().clear();
        transitions
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            events_routed: self.metrics.events_routed.load(Ordering::Relaxed),
            deliveries: self.metrics.deliveries.load(Ordering::Relaxed),
            drops: self.metrics.drops.load(Ordering::Relaxed),
            active_sessions: self.sessions.read().unwrap().len() as u64,
            subscriptions: self.registry.read().unwrap().len() as u64,
            presence_broadcasts: self.metrics.presence_broadcasts.load(Ordering::Relaxed),
            sessions_opened: self.metrics.sessions_opened.load(Ordering::Relaxed),
        }
    }
}
