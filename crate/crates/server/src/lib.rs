//! Session-oriented HTTP service over the explanation pipeline.
//!
//! Every session owns a trained agent and a current state. Queries never
//! modify the learned values; only `step` moves the current state.

pub mod api;
pub mod session;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

pub use api::{router, AppState};
pub use session::{Session, SessionSpec, SessionStore};

pub const DEFAULT_BUDGET: Duration = Duration::from_secs(30);

/// Serves `store` on `addr` until ctrl-c.
pub async fn serve(store: SessionStore, addr: SocketAddr, budget: Duration) -> std::io::Result<()> {
    let state = Arc::new(AppState { store, budget });
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
