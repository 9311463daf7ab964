use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use shelfid_core::embedding::{embed, normalize};
use shelfid_core::geometry::crop_and_pad;
use shelfid_core::registry::{FlagStatus, NewSku, ResolveRequest, SearchMode, SkuPatch};
use shelfid_core::{Catalog, CheckoutImage, ClassifyParams, Embedding, PixelBox, Receipt, SkuRecord, UnknownFlag};

use crate::error::{ApiError, ErrorCode};
use crate::metrics::MetricsReport;
use crate::{snapshot_exists, AppState};

type AppResult<T> = Result<T, ApiError>;
type St = State<Arc<AppState>>;

pub(crate) fn routes() -> Router<Arc<AppState>> {
    Router::new()
        .route("/v1/checkout", post(checkout))
        .route("/v1/skus", post(create_sku).get(list_skus))
        .route("/v1/skus:batch", post(create_batch))
        .route("/v1/skus/{id}", get(get_sku).patch(patch_sku).delete(delete_sku))
        .route("/v1/flags", get(list_flags))
        .route("/v1/flags/{id}", get(get_flag))
        .route("/v1/flags/{id}/resolve", post(resolve_flag))
        .route("/v1/flags/{id}/dismiss", post(dismiss_flag))
        .route("/v1/snapshot/save", post(snapshot_save))
        .route("/v1/snapshot/load", post(snapshot_load))
        .route("/v1/healthz", get(healthz))
        .route("/v1/metrics", get(metrics))
        .fallback(|| async { ApiError::new(ErrorCode::NotFound, "no such route") })
}

/// Runs blocking work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> AppResult<T> + Send + 'static) -> AppResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::new(ErrorCode::Internal, format!("worker failed: {e}"))))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn decode_image(bytes: &[u8]) -> AppResult<image::RgbImage> {
    image::load_from_memory(bytes)
        .map(|i| i.to_rgb8())
        .map_err(|e| ApiError::bad_request(format!("cannot decode image: {e}")))
}

fn decode_b64(text: &str) -> AppResult<Vec<u8>> {
    B64.decode(text.trim())
        .map_err(|e| ApiError::bad_request(format!("invalid base64: {e}")))
}

// ---- checkout ----

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckoutBody {
    #[serde(default)]
    pub fixture_id: Option<String>,
    #[serde(default)]
    pub image_base64: Option<String>,
    #[serde(default)]
    pub image_id: Option<String>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub search: Option<SearchMode>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckoutQuery {
    image_id: Option<String>,
    tau: Option<f64>,
    k: Option<usize>,
    search: Option<SearchMode>,
}

fn is_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"))
}

fn load_fixture(state: &AppState, id: &str) -> AppResult<image::RgbImage> {
    if !valid_id(id) {
        return Err(ApiError::bad_request(format!("invalid fixture_id '{id}'")));
    }
    let dir = state
        .config
        .fixture_dir
        .as_ref()
        .ok_or_else(|| ApiError::bad_request("no fixture directory configured"))?;
    for ext in ["png", "jpg", "jpeg"] {
        let path = dir.join(format!("{id}.{ext}"));
        if path.exists() {
            let bytes = std::fs::read(&path).map_err(|e| ApiError::io(format!("cannot read fixture: {e}")))?;
            return decode_image(&bytes);
        }
    }
    Err(ApiError::bad_request(format!("unknown fixture '{id}'")))
}

async fn checkout(
    State(state): St,
    query: Result<Query<CheckoutQuery>, QueryRejection>,
    headers: HeaderMap,
    body: Bytes,
) -> AppResult<Json<Receipt>> {
    let Query(q) = query?;
    let result = blocking({
        let state = state.clone();
        move || {
            let (id, pixels, req) = if is_json(&headers) {
                let b: CheckoutBody = serde_json::from_slice(&body)
                    .map_err(|e| ApiError::bad_request(format!("invalid checkout body: {e}")))?;
                match (&b.fixture_id, &b.image_base64) {
                    (Some(f), None) => (f.clone(), load_fixture(&state, f)?, b),
                    (None, Some(data)) => {
                        let bytes = decode_b64(data)?;
                        let id = b.image_id.clone().unwrap_or_else(|| content_id(&bytes));
                        (id, decode_image(&bytes)?, b)
                    }
                    _ => return Err(ApiError::bad_request("give exactly one of fixture_id or image_base64")),
                }
            } else {
                if body.is_empty() {
                    return Err(ApiError::bad_request("empty request body"));
                }
                let id = q.image_id.clone().unwrap_or_else(|| content_id(&body));
                let req = CheckoutBody {
                    tau: q.tau,
                    k: q.k,
                    search: q.search,
                    ..CheckoutBody::default()
                };
                (id, decode_image(&body)?, req)
            };
            if !valid_id(&id) {
                return Err(ApiError::bad_request(format!("invalid image_id '{id}'")));
            }
            let params = ClassifyParams {
                tau: req.tau.unwrap_or_else(|| state.registry().read().tau_default()),
                k: req.k.unwrap_or(state.config.k_default),
                search: req.search.unwrap_or_default(),
            };
            params.validate()?;
            Ok(state.engine.process_checkout(&CheckoutImage::new(id, pixels), &params)?)
        }
    })
    .await;
    match result {
        Ok(receipt) => {
            state.metrics.record_checkout(&receipt.timings);
            Ok(Json(receipt))
        }
        Err(e) => {
            state.metrics.record_error();
            Err(e)
        }
    }
}

fn content_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..12])
}

// ---- skus ----

/// A reference is either an embedding or a base64-encoded product image,
/// which is letterboxed and embedded by the active provider.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReferenceInput {
    Embedding(Vec<f64>),
    Image(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkuBody {
    pub sku_id: String,
    pub name: String,
    pub price_cents: u64,
    #[serde(default)]
    pub category: String,
    pub references: Vec<ReferenceInput>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchBody {
    pub skus: Vec<SkuBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkuView {
    pub sku_id: String,
    pub name: String,
    pub price_cents: u64,
    pub category: String,
    pub reference_count: usize,
    pub registered_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid: Option<Vec<f64>>,
}

impl SkuView {
    fn new(r: &SkuRecord, include_vector: bool) -> Self {
        Self {
            sku_id: r.sku_id.clone(),
            name: r.name.clone(),
            price_cents: r.price_cents,
            category: r.category.clone(),
            reference_count: r.reference_count,
            registered_at: r.registered_at,
            centroid: include_vector.then(|| r.centroid.values().to_vec()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkuList {
    pub total: usize,
    pub skus: Vec<SkuView>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewQuery {
    #[serde(default)]
    include_vector: bool,
    #[serde(default)]
    offset: Option<usize>,
    #[serde(default)]
    limit: Option<usize>,
}

fn to_new_sku(state: &AppState, body: SkuBody) -> AppResult<NewSku> {
    let provider = state.engine.provider();
    let spec = state.engine.crop_spec();
    let mut references = Vec::with_capacity(body.references.len());
    for (i, r) in body.references.into_iter().enumerate() {
        let e = match r {
            ReferenceInput::Embedding(v) => Embedding::new(v)
                .and_then(|e| normalize(&e))
                .map_err(|e| ApiError::validation(format!("reference {i}: {e}")))?,
            ReferenceInput::Image(data) => {
                let img = decode_image(&decode_b64(&data)?)?;
                let full = PixelBox::new(0.0, 0.0, img.width() as f64, img.height() as f64);
                let patch = crop_and_pad(&img, &body.sku_id, &full, spec)
                    .map_err(|e| ApiError::bad_request(format!("reference {i}: {e}")))?;
                embed(provider, &patch)?
            }
        };
        references.push(e);
    }
    Ok(NewSku {
        sku_id: body.sku_id,
        name: body.name,
        price_cents: body.price_cents,
        category: body.category,
        references,
    })
}

async fn create_sku(
    State(state): St,
    query: Result<Query<ViewQuery>, QueryRejection>,
    body: Result<Json<SkuBody>, JsonRejection>,
) -> AppResult<(StatusCode, Json<SkuView>)> {
    let Query(q) = query?;
    let Json(body) = body?;
    let record = blocking(move || {
        let sku = to_new_sku(&state, body)?;
        Ok(state.registry().write().register_sku(sku)?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(SkuView::new(&record, q.include_vector))))
}

async fn create_batch(
    State(state): St,
    query: Result<Query<ViewQuery>, QueryRejection>,
    body: Result<Json<BatchBody>, JsonRejection>,
) -> AppResult<(StatusCode, Json<SkuList>)> {
    let Query(q) = query?;
    let Json(body) = body?;
    let records = blocking(move || {
        let batch = body
            .skus
            .into_iter()
            .map(|b| to_new_sku(&state, b))
            .collect::<AppResult<Vec<_>>>()?;
        Ok(state.registry().write().register_batch(batch)?)
    })
    .await?;
    let skus: Vec<_> = records.iter().map(|r| SkuView::new(r, q.include_vector)).collect();
    Ok((StatusCode::CREATED, Json(SkuList { total: skus.len(), skus })))
}

async fn list_skus(State(state): St, query: Result<Query<ViewQuery>, QueryRejection>) -> AppResult<Json<SkuList>> {
    let Query(q) = query?;
    let all = state.registry().read().list_skus();
    let skus = all
        .iter()
        .skip(q.offset.unwrap_or(0))
        .take(q.limit.unwrap_or(usize::MAX))
        .map(|r| SkuView::new(r, q.include_vector))
        .collect();
    Ok(Json(SkuList { total: all.len(), skus }))
}

async fn get_sku(
    State(state): St,
    id: Result<Path<String>, PathRejection>,
    query: Result<Query<ViewQuery>, QueryRejection>,
) -> AppResult<Json<SkuView>> {
    let Path(id) = id?;
    let Query(q) = query?;
    let catalog = state.registry().read();
    let r = catalog
        .get_sku(&id)
        .ok_or_else(|| ApiError::new(ErrorCode::UnknownSku, format!("unknown SKU '{id}'")))?;
    Ok(Json(SkuView::new(r, q.include_vector)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatchBody {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    price_cents: Option<u64>,
    #[serde(default)]
    category: Option<String>,
}

async fn patch_sku(
    State(state): St,
    id: Result<Path<String>, PathRejection>,
    body: Result<Json<PatchBody>, JsonRejection>,
) -> AppResult<Json<SkuView>> {
    let Path(id) = id?;
    let Json(b) = body?;
    if b.name.is_none() && b.price_cents.is_none() && b.category.is_none() {
        return Err(ApiError::validation("nothing to update"));
    }
    let patch = SkuPatch {
        name: b.name,
        price_cents: b.price_cents,
        category: b.category,
    };
    let r = state.registry().write().update_sku(&id, patch)?;
    Ok(Json(SkuView::new(&r, false)))
}

async fn delete_sku(State(state): St, id: Result<Path<String>, PathRejection>) -> AppResult<StatusCode> {
    let Path(id) = id?;
    state.registry().write().remove_sku(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

// ---- flags ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagView {
    pub flag_id: String,
    pub status: FlagStatus,
    pub patch_ref: String,
    pub best_sku_id: Option<String>,
    pub best_score: Option<f64>,
    pub created_at: DateTime<Utc>,
    pub resolved_sku_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    /// Base64 PNG of the flagged patch; only on single-flag reads.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_png_base64: Option<String>,
}

impl FlagView {
    fn new(f: &UnknownFlag, include_vector: bool) -> Self {
        Self {
            flag_id: f.flag_id.clone(),
            status: f.status,
            patch_ref: f.patch_ref.clone(),
            best_sku_id: f.best_sku_id.clone(),
            best_score: f.best_score,
            created_at: f.created_at,
            resolved_sku_id: f.resolved_sku_id.clone(),
            embedding: include_vector.then(|| f.embedding.values().to_vec()),
            patch_png_base64: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlagList {
    pub total: usize,
    pub flags: Vec<FlagView>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlagQuery {
    #[serde(default)]
    status: Option<FlagStatus>,
    #[serde(default)]
    include_vector: bool,
}

async fn list_flags(State(state): St, query: Result<Query<FlagQuery>, QueryRejection>) -> AppResult<Json<FlagList>> {
    let Query(q) = query?;
    let flags: Vec<_> = state
        .registry()
        .read()
        .list_flags(q.status)
        .iter()
        .map(|f| FlagView::new(f, q.include_vector))
        .collect();
    Ok(Json(FlagList {
        total: flags.len(),
        flags,
    }))
}

fn unknown_flag(id: &str) -> ApiError {
    ApiError::new(ErrorCode::UnknownFlag, format!("unknown flag '{id}'"))
}

async fn get_flag(
    State(state): St,
    id: Result<Path<String>, PathRejection>,
    query: Result<Query<FlagQuery>, QueryRejection>,
) -> AppResult<Json<FlagView>> {
    let Path(id) = id?;
    let Query(q) = query?;
    let mut view = {
        let catalog = state.registry().read();
        let f = catalog.get_flag(&id).ok_or_else(|| unknown_flag(&id))?;
        FlagView::new(f, q.include_vector)
    };
    let png = state
        .engine
        .patches()
        .get(&view.patch_ref)
        .map_err(|e| ApiError::io(format!("cannot read patch: {e}")))?;
    view.patch_png_base64 = png.map(|b| B64.encode(b));
    Ok(Json(view))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResolveBody {
    sku_id: String,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    price_cents: Option<u64>,
    #[serde(default)]
    category: Option<String>,
}

async fn resolve_flag(
    State(state): St,
    id: Result<Path<String>, PathRejection>,
    body: Result<Json<ResolveBody>, JsonRejection>,
) -> AppResult<Json<SkuView>> {
    let Path(id) = id?;
    let Json(b) = body?;
    let req = ResolveRequest {
        sku_id: b.sku_id,
        name: b.name,
        price_cents: b.price_cents,
        category: b.category,
        extra_references: Vec::new(),
    };
    let r = state.registry().write().resolve_flag(&id, req)?;
    Ok(Json(SkuView::new(&r, false)))
}

async fn dismiss_flag(State(state): St, id: Result<Path<String>, PathRejection>) -> AppResult<Json<FlagView>> {
    let Path(id) = id?;
    let f = state.registry().write().dismiss_flag(&id)?;
    Ok(Json(FlagView::new(&f, false)))
}

// ---- snapshot, health, metrics ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotInfo {
    pub path: String,
    pub sku_count: usize,
    pub flag_count: usize,
}

fn snapshot_info(state: &AppState, catalog: &Catalog) -> SnapshotInfo {
    SnapshotInfo {
        path: state.config.snapshot_path.display().to_string(),
        sku_count: catalog.len(),
        flag_count: catalog.list_flags(None).len(),
    }
}

async fn snapshot_save(State(state): St) -> AppResult<Json<SnapshotInfo>> {
    let info = blocking(move || {
        let catalog = state.registry().read();
        catalog
            .save(&state.config.snapshot_path)
            .map_err(|e| ApiError::io(e.to_string()))?;
        Ok(snapshot_info(&state, &catalog))
    })
    .await?;
    Ok(Json(info))
}

async fn snapshot_load(State(state): St) -> AppResult<Json<SnapshotInfo>> {
    let info = blocking(move || {
        let dir = &state.config.snapshot_path;
        if !snapshot_exists(dir) {
            return Err(ApiError::io(format!("no snapshot at {}", dir.display())));
        }
        let mut catalog = Catalog::load(dir).map_err(|e| ApiError::io(e.to_string()))?;
        if catalog.dim() != state.config.provider_dim() {
            return Err(ApiError::io(format!(
                "snapshot dimension {} does not match provider dimension {}",
                catalog.dim(),
                state.config.provider_dim()
            )));
        }
        catalog.set_ef_search(state.config.hnsw.ef_search);
        let info = snapshot_info(&state, &catalog);
        state.registry().replace(catalog);
        Ok(info)
    })
    .await?;
    Ok(Json(info))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub build: String,
    pub catalog_size: usize,
    pub dim: usize,
    pub open_flags: usize,
    pub uptime_s: f64,
}

async fn healthz(State(state): St) -> Json<Health> {
    let catalog = state.registry().read();
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        build: if cfg!(debug_assertions) { "debug" } else { "release" }.into(),
        catalog_size: catalog.len(),
        dim: catalog.dim(),
        open_flags: catalog.list_flags(Some(FlagStatus::Open)).len(),
        uptime_s: state.started.elapsed().as_secs_f64(),
    })
}

async fn metrics(State(state): St) -> Json<MetricsReport> {
    Json(state.metrics.report())
}
