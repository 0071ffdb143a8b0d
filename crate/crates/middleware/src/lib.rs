//! The middleware: HTTP surface over the repository, task manager and
//! result analytics, and the only party that talks to site agents.

pub mod client;
pub mod config;
pub mod error;
pub mod fabric;
pub mod local;
pub mod routes;

use std::sync::Arc;

use tokio::net::TcpListener;
use tokio_util::sync::CancellationToken;

pub use client::{ApiClient, ClientError};
pub use config::{MiddlewareConfig, SiteEndpoint};
pub use error::ApiError;
pub use fabric::{Fabric, StartError};
pub use routes::{router, RouteSpec, MODULE_OPERATIONS, ROUTES};

/// Serves the API on `listener` until `shutdown` fires.
pub async fn serve(fabric: Arc<Fabric>, listener: TcpListener, shutdown: CancellationToken) -> std::io::Result<()> {
    axum::serve(listener, router(fabric))
        .with_graceful_shutdown(async move { shutdown.cancelled().await })
        .await
}
