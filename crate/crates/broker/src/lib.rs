//! Content-based publish/subscribe broker.
//!
//! [`Router`] holds all routing state and is usable without any network;
//! [`serve`] puts it behind a TCP listener speaking the NDJSON frame protocol.

pub mod router;
pub mod server;
pub mod stats;

pub use router::{
    BrokerSettings, DeliveryReport, MetricsSnapshot, PresenceTransition, RegistryEntry, RegistrySnapshot, Router,
    SessionError, SessionId, DEFAULT_QUEUE_CAP, GONE_AFTER_MS, HEARTBEAT_INTERVAL_MS, MAX_SUBSCRIPTIONS_PER_SESSION,
    STALE_AFTER_MS,
};
pub use server::{serve, BrokerConfig, BrokerHandle, DEFAULT_PORT};
pub use stats::{serve_stats, stats_router};
