//! HTTP JSON API over the shelfid core: checkout, catalog CRUD, the unknown
//! product flag queue, snapshots, health and metrics. All routes live under
//! `/v1`; every non-2xx response carries an [`ErrorBody`].

pub mod config;
pub mod error;
pub mod metrics;
mod routes;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::{DefaultBodyLimit, Request, State};
use axum::http::{header, HeaderValue, Method};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::Router;
use thiserror::Error;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use shelfid_core::pipeline::{CheckoutEngine, DiskPatchStore};
use shelfid_core::registry::{RegistryError, CATALOG_FILE};
use shelfid_core::{Catalog, Registry};

pub use config::{ApiConfig, ConfigError, DetectorConfig, ProviderConfig};
pub use error::{ApiError, ErrorBody, ErrorCode};
pub use metrics::{Metrics, MetricsReport, StageSummary};
pub use routes::{
    BatchBody, CheckoutBody, FlagList, FlagView, Health, ReferenceInput, SkuBody, SkuList, SkuView, SnapshotInfo,
};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot load snapshot: {0}")]
    Snapshot(#[from] RegistryError),
    #[error("snapshot dimension {snapshot} does not match provider dimension {provider}")]
    DimMismatch { snapshot: usize, provider: usize },
    #[error("I/O failed: {0}")]
    Io(#[from] std::io::Error),
}

pub struct AppState {
    config: ApiConfig,
    engine: CheckoutEngine,
    metrics: Metrics,
    started: Instant,
}

impl AppState {
    /// Builds the engine from `config`. An existing snapshot at
    /// `snapshot_path` is loaded; otherwise the catalog starts empty.
    pub fn new(config: ApiConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        let catalog = if config.snapshot_path.join(CATALOG_FILE).exists() {
            let mut c = Catalog::load(&config.snapshot_path)?;
            check_dim(&c, &config)?;
            c.set_ef_search(config.hnsw.ef_search);
            c
        } else {
            Catalog::new(config.provider_dim(), config.hnsw_params())?
        };
        Self::with_catalog(config, catalog)
    }

    pub fn with_catalog(config: ApiConfig, mut catalog: Catalog) -> Result<Self, ServiceError> {
        check_dim(&catalog, &config)?;
        catalog.set_tau_default(config.tau_default);
        let engine = CheckoutEngine::new(
            Arc::new(Registry::new(catalog)),
            config.build_detector(),
            config.build_provider(),
            Arc::new(DiskPatchStore::new(&config.patch_dir)?),
        );
        Ok(Self {
            config,
            engine,
            metrics: Metrics::default(),
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &ApiConfig {
        &self.config
    }

    pub fn engine(&self) -> &CheckoutEngine {
        &self.engine
    }

    pub fn registry(&self) -> &Arc<Registry> {
        self.engine.registry()
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }
}

fn check_dim(catalog: &Catalog, config: &ApiConfig) -> Result<(), ServiceError> {
    if catalog.dim() != config.provider_dim() {
        return Err(ServiceError::DimMismatch {
            snapshot: catalog.dim(),
            provider: config.provider_dim(),
        });
    }
    Ok(())
}

pub(crate) fn snapshot_exists(dir: &Path) -> bool {
    dir.join(CATALOG_FILE).exists()
}

async fn require_token(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let Some(token) = state.config.auth_token.as_deref() else {
        return next.run(req).await;
    };
    if req.method() == Method::OPTIONS || req.uri().path() == "/v1/healthz" {
        return next.run(req).await;
    }
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    match presented {
        Some(p) if constant_time_eq(p.as_bytes(), token.as_bytes()) => next.run(req).await,
        Some(_) => ApiError::new(ErrorCode::Unauthorized, "invalid bearer token").into_response(),
        None => ApiError::new(ErrorCode::Unauthorized, "missing bearer token").into_response(),
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn cors(config: &ApiConfig) -> CorsLayer {
    let origin = if config.cors_origins.is_empty() {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(
            config
                .cors_origins
                .iter()
                .filter_map(|o| HeaderValue::from_str(o).ok()),
        )
    };
    CorsLayer::new()
        .allow_origin(origin)
        .allow_methods(Any)
        .allow_headers(Any)
}

/// The full `/v1` router.
pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_body_bytes;
    let cors = cors(&state.config);
    routes::routes()
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .layer(DefaultBodyLimit::max(limit))
        .layer(middleware::map_response(|r: Response| async move { error::ensure_error_body(r) }))
        .layer(cors)
        .with_state(state)
}

/// Binds `config.bind` and serves until ctrl-c.
pub async fn serve(config: ApiConfig) -> Result<(), ServiceError> {
    let bind = config.bind.clone();
    let state = Arc::new(AppState::new(config)?);
    let listener = tokio::net::TcpListener::bind(&bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
