//! Mixed-initiative HTTP service over the tabsight engine.
//!
//! A session holds one table and its insight ledger. Users and the agent edit the
//! ledger through the routes in [`api`]; every mutation bumps the session revision and
//! is appended to the session's event log (see [`store`]).

pub mod api;
pub mod config;
pub mod session;
pub mod store;

pub use api::{router, SessionView};
pub use config::ServiceConfig;
pub use session::{AnnotatedDocument, Recommender, RunOutcome, Session, SessionError, Tombstone};
pub use store::{replay, Event, LogEntry, ReplayReport, SessionStore};

use std::sync::Arc;

/// Opens the store and serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let recommender = config.recommender().map_err(anyhow::Error::msg)?;
    let store = SessionStore::open(&config.data_dir, config.engine.clone(), recommender)?;
    let app = router(Arc::new(store));
    let listener = tokio::net::TcpListener::bind((config.host.as_str(), config.port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
