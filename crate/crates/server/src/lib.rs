//! Networked ITS centre: the sans-IO server from `ivvdr-core` behind five
//! UDP sockets, plus an HTTP admin API.

pub mod api;
pub mod runtime;

pub use runtime::{start, Clock, RunningServer, ServerOptions, Shared};

/// Binds the admin API and serves it until the task is dropped.
pub async fn serve_api(
    listener: tokio::net::TcpListener,
    shared: std::sync::Arc<Shared>,
) -> std::io::Result<()> {
    axum::serve(listener, api::router(shared)).await
}
