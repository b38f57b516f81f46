//! The archiving "web subscriber": keeps every routed event in an
//! append-only log, answers latest/series/heat-map queries and relays a
//! filtered live stream over HTTP.

pub mod http;
pub mod query;
pub mod service;
pub mod store;

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;

use tokio::net::TcpListener;

pub use http::{api_router, ApiConfig};
pub use query::{heatmap, query_series, BBox, Bucket, HeatCell, HeatMapGrid, QueryError, Series};
pub use service::{connect_once, spawn_ingest, Aggregator, IngestConfig, LiveItem, PublisherRecord, ServiceStats};
pub use store::{AppendOutcome, EventStore, StoreError, StoredEvent, DEFAULT_STORE_CAP};

/// Bind the HTTP API and serve it in the background until `shutdown`
/// resolves. Returns the bound address.
pub async fn serve_http(
    addr: SocketAddr,
    aggregator: Arc<Aggregator>,
    config: ApiConfig,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> io::Result<(SocketAddr, tokio::task::JoinHandle<io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let app = api_router(aggregator, config);
    tracing::info!(target: "smartrescue::aggregate", addr = %local, "http api listening");
    let task = tokio::spawn(async move { axum::serve(listener, app).with_graceful_shutdown(shutdown).await });
    Ok((local, task))
}
