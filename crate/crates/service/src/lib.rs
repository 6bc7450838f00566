//! HTTP facade over annotation runs: start and stop runs, read their
//! status, and answer the human queue.

pub mod api;
pub mod registry;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use api::router;
pub use registry::{Registry, RunHandle};

/// Binds `addr` and serves until `shutdown` resolves. With `console`, the
/// directory is served as static files under `/`.
pub async fn serve(
    addr: SocketAddr,
    registry: Arc<Registry>,
    console: Option<PathBuf>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_on(listener, registry, console, shutdown).await
}

pub async fn serve_on(
    listener: tokio::net::TcpListener,
    registry: Arc<Registry>,
    console: Option<PathBuf>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let mut app = router(registry);
    if let Some(dir) = console {
        app = app.fallback_service(tower_http::services::ServeDir::new(dir));
    }
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
