//! Session server for interactive rig manipulation.
//!
//! HTTP: `GET /rigs`, `POST /sessions {rig_id}`, `GET /sessions/{id}/state`,
//! `GET /sessions/{id}/mesh?pose=current|canonical&format=binary|json`,
//! `PUT /sessions/{id}/pose`, `GET /sessions/{id}/rig`, `DELETE /sessions/{id}`.
//! WebSocket: `GET /sessions/{id}/ws[?format=json]`; see [`protocol`].

pub mod catalog;
pub mod protocol;
pub mod server;
pub mod session;

pub use catalog::{Catalog, RigEntry, RigSummary};
pub use server::{router, AppState, ServerConfig};
pub use session::{Session, Snapshot, StateView};

/// Binds `addr` and serves until the future is dropped or ctrl-c arrives.
pub async fn serve(listener: tokio::net::TcpListener, state: std::sync::Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
