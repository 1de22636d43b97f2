//! Control plane for simulated robots: accounts, robot bindings, scoped
//! bearer tokens, goals, mapping, teleop and event streams over HTTP/WS.

pub mod auth;
pub mod config;
pub mod error;
pub mod events;
pub mod mapfile;
pub mod provision;
pub mod routes;
pub mod state;
pub mod store;
pub mod teleop;
pub mod worker;
mod ws;

pub use config::{ApiConfig, ConfigError};
pub use error::ApiError;
pub use routes::{router, Access, RouteSpec, ROUTES};
pub use state::AppState;

use std::net::SocketAddr;

use tokio::net::TcpListener;
use tokio::task::JoinHandle;

/// Bound server running on the current tokio runtime.
pub struct RunningServer {
    pub addr: SocketAddr,
    pub state: AppState,
    pub task: JoinHandle<std::io::Result<()>>,
}

/// Binds `config.bind` and serves in a background task.
pub async fn spawn(config: ApiConfig) -> Result<RunningServer, ApiError> {
    let listener = TcpListener::bind(config.bind).await.map_err(ApiError::internal)?;
    let addr = listener.local_addr().map_err(ApiError::internal)?;
    let state = AppState::new(config)?;
    let app = router(state.clone());
    let task = tokio::spawn(async move { axum::serve(listener, app).await });
    tracing::info!(%addr, "listening");
    Ok(RunningServer { addr, state, task })
}

/// Serves until the listener fails.
pub async fn serve(config: ApiConfig) -> Result<(), ApiError> {
    let server = spawn(config).await?;
    server.task.await.map_err(ApiError::internal)?.map_err(ApiError::internal)
}
