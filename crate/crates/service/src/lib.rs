//! HTTP review service: upload a study, read its interpretation at any
//! threshold, edit the draft report and finalize it.
//!
//! State lives in a single SQLite file (see `schema.sql`); the API is
//! described in `openapi.yaml`.

mod api;
mod config;
mod engine;
pub mod store;

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use tokio::net::TcpListener;

pub use api::{router, ApiError, AppState};
pub use config::ServiceConfig;
pub use engine::Engine;
pub use store::Store;

pub const OPENAPI: &str = include_str!("../openapi.yaml");

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] cxr::Error),
    #[error("opening storage {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: rusqlite::Error,
    },
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    pub fn is_user_error(&self) -> bool {
        match self {
            ServiceError::Core(e) => e.is_user_error(),
            ServiceError::Storage { .. } | ServiceError::Bind { .. } => true,
            ServiceError::Io(_) => false,
        }
    }
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Loads models and storage, binds, and serves until Ctrl-C.
pub async fn run(config: ServiceConfig) -> Result<(), ServiceError> {
    config.validate()?;
    let models = cxr::pipeline::LoadedModels::open(&config.models)?;
    let store = Store::open(&config.storage).map_err(|source| ServiceError::Storage {
        path: config.storage.clone(),
        source,
    })?;
    let addr = format!("{}:{}", config.host, config.port);
    let listener = TcpListener::bind(&addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })?;
    log::info!("listening on {}", listener.local_addr()?);
    let state = AppState::new(Arc::new(models), store, config);
    serve(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
        log::info!("shutting down");
    })
    .await?;
    Ok(())
}
