//! HTTP endpoint exposing the broker's metrics counters as JSON.

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::routing::get;
use axum::{Json, Router as HttpRouter};
use tokio::net::TcpListener;

use crate::router::{MetricsSnapshot, Router};

pub fn stats_router(router: Arc<Router>) -> HttpRouter {
    HttpRouter::new()
        .route("/", get(stats))
        .route("/stats", get(stats))
        .with_state(router)
}

async fn stats(State(router): State<Arc<Router>>) -> Json<MetricsSnapshot> {
    Json(router.metrics())
}

/// Serve the stats endpoint until `shutdown` resolves. Returns the bound
/// address.
pub async fn serve_stats(
    addr: SocketAddr,
    router: Arc<Router>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> io::Result<(SocketAddr, tokio::task::JoinHandle<io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let app = stats_router(router);
    let task = tokio::spawn(async move { axum::serve(listener, app).with_graceful_shutdown(shutdown).await });
    Ok((local, task))
}
