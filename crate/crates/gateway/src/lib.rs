//! HTTP front end for a hearth household.
//!
//! Every route lives under `/v1`. Reads are open to anything that can reach
//! the listener (loopback by default); changing the stage needs the admin
//! bearer token. Feature gates are enforced by the household itself, so a
//! locked route answers `423 Locked` with a `stage_gate` error body and
//! changes nothing.

pub mod config;
pub mod error;
pub mod extract;
pub mod routes;
pub mod sse;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::http::HeaderMap;
use axum::routing::{get, post, put};
use axum::Router;
use hearth_core::events::Sequenced;
use hearth_core::Household;
use thiserror::Error;
use tokio::sync::broadcast;

pub use config::{ConfigError, GatewayConfig};
pub use error::{ApiError, ErrorBody};

/// Per-subscriber buffer before a slow stream client falls back to the
/// household backlog.
const STREAM_BUFFER: usize = 4096;

#[derive(Clone)]
pub struct AppState {
    pub household: Arc<Household>,
    admin_token: Arc<str>,
    events: broadcast::Sender<Arc<Sequenced>>,
}

impl AppState {
    /// Wires the household event log into a broadcast channel shared by all
    /// stream clients.
    pub fn new(household: Arc<Household>, admin_token: impl Into<String>) -> Self {
        let (tx, _) = broadcast::channel(STREAM_BUFFER);
        let sink = tx.clone();
        household.events().subscribe(
            0,
            Box::new(move |e| {
                let _ = sink.send(Arc::new(e.clone()));
            }),
        );
        Self {
            household,
            admin_token: Arc::from(admin_token.into()),
            events: tx,
        }
    }

    fn authorize(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        let presented = headers
            .get(axum::http::header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim);
        match presented {
            Some(t) if !self.admin_token.is_empty() && constant_time_eq(t.as_bytes(), self.admin_token.as_bytes()) => {
                Ok(())
            }
            _ => Err(ApiError::Unauthorized),
        }
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

pub fn router(state: AppState) -> Router {
    use routes as r;
    let v1 = Router::new()
        .route("/health", get(r::health))
        .route("/stage", get(r::get_stage).put(r::set_stage))
        .route("/devices", get(r::devices))
        .route("/devices/{id}", put(r::rename_device))
        .route("/companies", get(r::companies))
        .route("/fixtures", post(r::load_fixtures))
        .route("/replay", post(r::replay))
        .route("/flows", get(r::flows))
        .route("/flows/export", get(r::export_flows))
        .route("/flows/import", post(r::import_flows))
        .route("/buckets", get(r::buckets))
        .route("/timeseries", get(r::timeseries))
        .route("/profile", get(r::profile))
        .route("/report", get(r::report))
        .route("/compare", get(r::compare))
        .route("/directives", get(r::directives).post(r::create_directive))
        .route("/directives/preview", post(r::preview_draft))
        .route("/directives/export", get(r::export_directives))
        .route("/directives/import", post(r::import_directives))
        .route("/directives/{id}", get(r::directive))
        .route("/directives/{id}/enable", post(r::enable_directive))
        .route("/directives/{id}/disable", post(r::disable_directive))
        .route("/directives/{id}/preview", post(r::preview_directive))
        .route("/directives/{id}/suggestions", get(r::suggestions))
        .route("/blocklists", get(r::blocklists))
        .route("/blocklists/{id}", put(r::put_blocklist))
        .route("/blocklists/{id}/enable", post(r::enable_blocklist))
        .route("/blocklists/{id}/disable", post(r::disable_blocklist))
        .route("/ruleset", get(r::ruleset))
        .route("/curriculum", get(r::curriculum))
        .route("/curriculum/due", get(r::curriculum_due))
        .route("/curriculum/context", get(r::curriculum_context))
        .route("/curriculum/{id}", get(r::render_module))
        .route("/curriculum/{id}/complete", post(r::complete_module))
        .route("/redactions", get(r::audit).post(r::redact))
        .route("/events", get(sse::events));
    Router::new()
        .nest("/v1", v1)
        .fallback(|| async { ApiError::Household(hearth_core::HouseholdError::NotFound("no such route".into())) })
        .with_state(state)
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot open household: {0}")]
    Household(#[from] hearth_core::HouseholdError),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: std::net::SocketAddr,
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Opens the household, starts capture and upkeep, and serves until
/// interrupted.
pub async fn serve(config: GatewayConfig) -> Result<(), ServeError> {
    let household = Arc::new(Household::open(config.household_config()?, config.deps()?)?);
    let token = config.admin_token()?;
    let state = AppState::new(household.clone(), token);
    let addr = config.addr();
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })?;
    tracing::info!(%addr, stage = %household.stage().stage(), "listening");

    let stop = Arc::new(AtomicBool::new(false));
    let capture = config.capture_interface.clone().map(|iface| {
        let (h, stop) = (household.clone(), stop.clone());
        std::thread::spawn(move || match h.capture_live(&iface, &stop) {
            Ok(s) => tracing::info!(flows = s.stored, "capture stopped"),
            Err(e) => tracing::error!(error = %e, interface = %iface, "capture failed"),
        })
    });
    let ticker = {
        let h = household.clone();
        let every = Duration::from_secs(config.tick_secs.max(1));
        tokio::spawn(async move {
            let mut iv = tokio::time::interval(every);
            loop {
                iv.tick().await;
                let h = h.clone();
                match tokio::task::spawn_blocking(move || h.tick()).await {
                    Ok(Err(e)) => tracing::warn!(error = %e, "upkeep failed"),
                    Err(e) => tracing::warn!(error = %e, "upkeep panicked"),
                    Ok(Ok(())) => {}
                }
            }
        })
    };

    let result = axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await;
    ticker.abort();
    stop.store(true, Ordering::Relaxed);
    household.events().clear_listeners();
    if let Some(t) = capture {
        let _ = tokio::task::spawn_blocking(move || t.join()).await;
    }
    result?;
    Ok(())
}
