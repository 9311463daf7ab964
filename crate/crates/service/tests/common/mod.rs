#![allow(dead_code)]

use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use http_body_util::BodyExt;
use image::{ImageFormat, Rgb, RgbImage};
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

use shelfid_core::embedding::LabelOracleEmbedder;
use shelfid_core::labelio::serialize_annotation;
use shelfid_core::NormalizedBox;
use shelfid_service::{router, ApiConfig, AppState, DetectorConfig, ProviderConfig};

pub const DIM: usize = 64;

pub struct Harness {
    pub dir: TempDir,
    pub state: Arc<AppState>,
    pub app: Router,
}

pub fn config(dir: &Path) -> ApiConfig {
    let fixtures = dir.join("fixtures");
    std::fs::create_dir_all(&fixtures).unwrap();
    let mut cfg = ApiConfig::new(
        DetectorConfig::Fixture { dir: fixtures.clone() },
        ProviderConfig::LabelOracle {
            seed: 7,
            dim: DIM,
            noise: 0.1,
        },
    );
    cfg.fixture_dir = Some(fixtures);
    cfg.snapshot_path = dir.join("snapshot");
    cfg.patch_dir = dir.join("patches");
    cfg
}

impl Harness {
    pub fn new() -> Self {
        Self::with(|_| {})
    }

    pub fn with(edit: impl FnOnce(&mut ApiConfig)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path());
        edit(&mut cfg);
        Self::from_config(dir, cfg)
    }

    pub fn from_config(dir: TempDir, cfg: ApiConfig) -> Self {
        let state = Arc::new(AppState::new(cfg).unwrap());
        let app = router(state.clone());
        Self { dir, state, app }
    }

    /// A second server over the same directory, as after a restart.
    pub fn restart(self) -> Self {
        let cfg = self.state.config().clone();
        Self::from_config(self.dir, cfg)
    }

    pub async fn send(&self, req: Request<Body>) -> (StatusCode, Value) {
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| panic!("non-JSON body: {}", String::from_utf8_lossy(&bytes)))
        };
        (status, value)
    }

    pub async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(b) => req
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        };
        self.send(req.unwrap()).await
    }

    pub async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, None).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, Some(body)).await
    }

    pub async fn checkout(&self, fixture: &str) -> (StatusCode, Value) {
        self.post("/v1/checkout", json!({ "fixture_id": fixture })).await
    }

    pub async fn register(&self, sku_id: &str, class: u16, price_cents: u64) -> (StatusCode, Value) {
        self.post("/v1/skus", sku_body(sku_id, class, price_cents)).await
    }

    /// Writes a checkout fixture with one product per class, left to right.
    pub fn fixture(&self, id: &str, classes: &[u16]) {
        let dir = self.state.config().fixture_dir.clone().unwrap();
        let (img, labels) = scene(id, classes);
        img.save(dir.join(format!("{id}.png"))).unwrap();
        std::fs::write(dir.join(format!("{id}.txt")), labels).unwrap();
    }

    /// Catalog document plus index bytes: equal before and after a failed
    /// request means nothing was committed.
    pub fn snapshot(&self) -> (String, Vec<u8>) {
        let catalog = self.state.registry().read();
        (
            serde_json::to_string(&catalog.to_document()).unwrap(),
            catalog.index().to_snapshot_bytes(),
        )
    }
}

pub fn scene(id: &str, classes: &[u16]) -> (RgbImage, String) {
    let (w, h) = (120 * classes.len().max(1) as u32, 200);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let mut boxes = Vec::new();
    for (i, &c) in classes.iter().enumerate() {
        let x0 = 120 * i as u32 + 10;
        for y in 20..180 {
            for x in x0..x0 + 100 {
                img.put_pixel(x, y, LabelOracleEmbedder::class_color(c));
            }
        }
        // Varies the pixel hash, and so the oracle's draw, per image and slot.
        img.put_pixel(x0 + 1, 21, Rgb([id.len() as u8, i as u8, 7]));
        boxes.push(
            NormalizedBox::new(
                c as u32,
                (x0 as f64 + 50.0) / w as f64,
                100.0 / h as f64,
                100.0 / w as f64,
                160.0 / h as f64,
            )
            .unwrap(),
        );
    }
    (img, serialize_annotation(&boxes).unwrap())
}

pub fn png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).unwrap();
    buf.into_inner()
}

/// A product photo of `class` as a base64 PNG; `variant` changes one pixel.
pub fn reference_image(class: u16, variant: u8) -> String {
    let mut img = RgbImage::from_pixel(100, 160, LabelOracleEmbedder::class_color(class));
    img.put_pixel(3, 3, Rgb([variant, 1, 2]));
    B64.encode(png(&img))
}

pub fn sku_body(sku_id: &str, class: u16, price_cents: u64) -> Value {
    json!({
        "sku_id": sku_id,
        "name": format!("Product {class}"),
        "price_cents": price_cents,
        "category": "test",
        "references": (0..3).map(|v| reference_image(class, v)).collect::<Vec<_>>(),
    })
}

/// Receipt without its timings, for equality across runs.
pub fn strip_timings(mut receipt: Value) -> Value {
    receipt.as_object_mut().unwrap().remove("timings");
    receipt
}
