//! HTTP service behind the sketch studio: sessions hold a base field and its
//! sketches, edits run as background jobs that stream progress over
//! server-sent events.

pub mod api;
pub mod jobs;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::Router;
use tower_http::services::ServeDir;

pub use jobs::{Settings, Studio};

/// The full application: API routes plus, optionally, the UI bundle at `/`.
pub fn app(studio: Arc<Studio>, static_dir: Option<PathBuf>) -> Router {
    let router = api::routes().with_state(studio);
    match static_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    }
}

/// Restores persisted sessions and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, settings: Settings, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let studio = Arc::new(Studio::new(settings));
    studio.restore();
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("studio listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app(studio, static_dir)).await
}
