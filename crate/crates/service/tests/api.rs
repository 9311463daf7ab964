mod common;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde_json::{json, Value};

use common::{png, scene, sku_body, strip_timings, Harness, DIM};

fn items(receipt: &Value) -> &Vec<Value> {
    receipt["items"].as_array().unwrap()
}

fn kinds(receipt: &Value) -> Vec<&str> {
    items(receipt).iter().map(|i| i["decision"]["kind"].as_str().unwrap()).collect()
}

fn assert_error(status: StatusCode, body: &Value, want: StatusCode, code: &str) {
    assert_eq!(status, want, "{body}");
    assert_eq!(body["code"], code, "{body}");
    assert!(body["message"].as_str().is_some_and(|m| !m.is_empty()), "{body}");
}

#[tokio::test]
async fn checkout_of_three_registered_products() {
    let h = Harness::new();
    for (c, p) in [(1u16, 199u64), (2, 350), (3, 950)] {
        let (s, body) = h.register(&format!("sku-{c}"), c, p).await;
        assert_eq!(s, StatusCode::CREATED, "{body}");
    }
    h.fixture("three", &[1, 2, 3]);
    let (s, r) = h.checkout("three").await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(kinds(&r), ["match"; 3]);
    let ids: Vec<_> = items(&r).iter().map(|i| i["decision"]["sku_id"].clone()).collect();
    assert_eq!(ids, [json!("sku-1"), json!("sku-2"), json!("sku-3")]);
    assert_eq!(r["subtotal_cents"], 199 + 350 + 950);
    assert_eq!(r["unknown_count"], 0);
    assert_eq!(r["image_id"], "three");
}

#[tokio::test]
async fn raw_and_base64_image_bodies() {
    let h = Harness::new();
    h.register("sku-4", 4, 120).await;
    let (img, labels) = scene("raw", &[4]);
    let fixtures = h.state.config().fixture_dir.clone().unwrap();
    std::fs::write(fixtures.join("upload-1.txt"), &labels).unwrap();

    let req = Request::post("/v1/checkout?image_id=upload-1")
        .header(header::CONTENT_TYPE, "image/png")
        .body(Body::from(png(&img)))
        .unwrap();
    let (s, raw) = h.send(req).await;
    assert_eq!(s, StatusCode::OK, "{raw}");
    assert_eq!(kinds(&raw), ["match"]);

    let (s, b64) = h
        .post("/v1/checkout", json!({ "image_base64": B64.encode(png(&img)), "image_id": "upload-1" }))
        .await;
    assert_eq!(s, StatusCode::OK, "{b64}");
    assert_eq!(strip_timings(raw), strip_timings(b64));
}

#[tokio::test]
async fn bad_checkout_payloads_are_400() {
    let h = Harness::new();
    let req = Request::post("/v1/checkout")
        .header(header::CONTENT_TYPE, "image/png")
        .body(Body::from(&b"definitely not a png"[..]))
        .unwrap();
    let (s, body) = h.send(req).await;
    assert_error(s, &body, StatusCode::BAD_REQUEST, "bad_request");

    let (s, body) = h.post("/v1/checkout", json!({ "image_base64": "@@@" })).await;
    assert_error(s, &body, StatusCode::BAD_REQUEST, "bad_request");
    let (s, body) = h.post("/v1/checkout", json!({})).await;
    assert_error(s, &body, StatusCode::BAD_REQUEST, "bad_request");
    let (s, body) = h.checkout("../etc/passwd").await;
    assert_error(s, &body, StatusCode::BAD_REQUEST, "bad_request");
    let (s, body) = h.checkout("missing").await;
    assert_error(s, &body, StatusCode::BAD_REQUEST, "bad_request");
    let (s, body) = h.post("/v1/checkout", json!({ "fixture_id": "x", "tau": 3.0 })).await;
    assert_error(s, &body, StatusCode::BAD_REQUEST, "bad_request");
}

#[tokio::test]
async fn detector_failure_is_422() {
    let h = Harness::new();
    let (img, _) = scene("nolabel", &[1]);
    let req = Request::post("/v1/checkout?image_id=no-sidecar")
        .header(header::CONTENT_TYPE, "image/png")
        .body(Body::from(png(&img)))
        .unwrap();
    let (s, body) = h.send(req).await;
    assert_error(s, &body, StatusCode::UNPROCESSABLE_ENTITY, "detector_failure");
}

#[tokio::test]
async fn unknown_product_is_flagged_with_patch() {
    let h = Harness::new();
    h.register("sku-1", 1, 100).await;
    h.register("sku-2", 2, 200).await;
    h.fixture("mixed", &[1, 77, 2]);
    let (s, r) = h.checkout("mixed").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(kinds(&r), ["match", "unknown", "match"]);
    assert_eq!(r["unknown_count"], 1);
    assert_eq!(r["subtotal_cents"], 300);
    let flag_id = r["flag_ids"][0].as_str().unwrap().to_string();
    assert_eq!(items(&r)[1]["flag_id"], flag_id.as_str());

    let (_, open) = h.get("/v1/flags?status=open").await;
    assert_eq!(open["total"], 1);
    assert_eq!(open["flags"][0]["flag_id"], flag_id.as_str());
    assert!(open["flags"][0].get("patch_png_base64").is_none());

    let (s, flag) = h.get(&format!("/v1/flags/{flag_id}")).await;
    assert_eq!(s, StatusCode::OK);
    let bytes = B64.decode(flag["patch_png_base64"].as_str().unwrap()).unwrap();
    let patch = image::load_from_memory(&bytes).unwrap().to_rgb8();
    assert_eq!(patch.dimensions(), (224, 224));
    assert_eq!(*patch.get_pixel(112, 112), shelfid_core::embedding::LabelOracleEmbedder::class_color(77));

    let (_, with_vec) = h.get(&format!("/v1/flags/{flag_id}?include_vector=true")).await;
    assert_eq!(with_vec["embedding"].as_array().unwrap().len(), DIM);
}

#[tokio::test]
async fn sku_registration_and_conflicts() {
    let h = Harness::new();
    let (s, rec) = h.register("sku-9", 9, 499).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(rec["reference_count"], 3);
    assert!(rec.get("centroid").is_none());

    let (s, body) = h.register("sku-9", 9, 499).await;
    assert_error(s, &body, StatusCode::CONFLICT, "duplicate_sku");

    let (s, rec) = h.post("/v1/skus?include_vector=true", sku_body("sku-10", 10, 1)).await;
    assert_eq!(s, StatusCode::CREATED);
    let centroid: Vec<f64> = serde_json::from_value(rec["centroid"].clone()).unwrap();
    assert_eq!(centroid.len(), DIM);
    assert!((centroid.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);

    let raw = vec![0.5; DIM];
    let (s, rec) = h
        .post(
            "/v1/skus",
            json!({"sku_id": "vec", "name": "By vector", "price_cents": 5, "references": [raw]}),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED, "{rec}");

    for bad in [
        json!({"sku_id": "e", "name": "n", "price_cents": 1, "references": []}),
        json!({"sku_id": "", "name": "n", "price_cents": 1, "references": [vec![1.0; DIM]]}),
        json!({"sku_id": "d", "name": "n", "price_cents": 1, "references": [[1.0, 0.0]]}),
        json!({"sku_id": "z", "name": "n", "price_cents": 1, "references": [vec![0.0; DIM]]}),
        json!({"sku_id": "b", "name": "n", "price_cents": 1, "references": ["%%%"]}),
        json!({"sku_id": "p", "name": "n", "price_cents": -1, "references": [vec![1.0; DIM]]}),
        json!({"sku_id": "u", "name": "n", "price_cents": 1, "references": [vec![1.0; DIM]], "extra": 1}),
    ] {
        let (s, body) = h.post("/v1/skus", bad.clone()).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{bad} -> {body}");
    }
}

#[tokio::test]
async fn batch_registration_is_atomic() {
    let h = Harness::new();
    let batch: Vec<Value> = (0..10).map(|i| sku_body(&format!("b-{i}"), 100 + i, 10 * i as u64)).collect();
    let (s, body) = h.post("/v1/skus:batch", json!({ "skus": batch })).await;
    assert_eq!(s, StatusCode::CREATED, "{body}");
    assert_eq!(body["skus"].as_array().unwrap().len(), 10);

    let before = h.snapshot();
    let clash = vec![sku_body("fresh", 200, 1), sku_body("b-3", 103, 1)];
    let (s, body) = h.post("/v1/skus:batch", json!({ "skus": clash })).await;
    assert_error(s, &body, StatusCode::CONFLICT, "duplicate_sku");
    assert_eq!(h.snapshot(), before);
    assert_eq!(h.get("/v1/skus/fresh").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn sku_crud() {
    let h = Harness::new();
    h.register("sku-5", 5, 250).await;
    let (s, rec) = h.get("/v1/skus/sku-5").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(rec["price_cents"], 250);

    let (s, list) = h.get("/v1/skus").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(list["total"], 1);

    h.fixture("five", &[5]);
    let (s, patched) = h.call(Method::PATCH, "/v1/skus/sku-5", Some(json!({"price_cents": 275}))).await;
    assert_eq!(s, StatusCode::OK, "{patched}");
    assert_eq!(patched["price_cents"], 275);
    let (_, r) = h.checkout("five").await;
    assert_eq!(r["subtotal_cents"], 275);
    assert_eq!(r["items"][0]["decision"]["price_cents"], 275);

    let (s, body) = h.call(Method::PATCH, "/v1/skus/sku-5", Some(json!({}))).await;
    assert_error(s, &body, StatusCode::BAD_REQUEST, "validation");
    let (s, body) = h.call(Method::PATCH, "/v1/skus/sku-5", Some(json!({"centroid": [1.0]}))).await;
    assert_error(s, &body, StatusCode::BAD_REQUEST, "bad_request");
    let (s, body) = h.call(Method::PATCH, "/v1/skus/nope", Some(json!({"price_cents": 1}))).await;
    assert_error(s, &body, StatusCode::NOT_FOUND, "unknown_sku");

    let (s, _) = h.call(Method::DELETE, "/v1/skus/sku-5", None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, body) = h.get("/v1/skus/sku-5").await;
    assert_error(s, &body, StatusCode::NOT_FOUND, "unknown_sku");
    let (s, body) = h.call(Method::DELETE, "/v1/skus/sku-5", None).await;
    assert_error(s, &body, StatusCode::NOT_FOUND, "unknown_sku");
}

#[tokio::test]
async fn paging_the_sku_list() {
    let h = Harness::new();
    for i in 0..5u16 {
        h.register(&format!("p-{i}"), i, 1).await;
    }
    let (_, page) = h.get("/v1/skus?offset=1&limit=2").await;
    assert_eq!(page["total"], 5);
    let ids: Vec<_> = page["skus"].as_array().unwrap().iter().map(|s| s["sku_id"].clone()).collect();
    assert_eq!(ids, [json!("p-1"), json!("p-2")]);
}

#[tokio::test]
async fn operator_loop_resolve_then_match() {
    let h = Harness::new();
    h.register("sku-1", 1, 100).await;
    h.fixture("loop", &[1, 55]);
    let (_, first) = h.checkout("loop").await;
    assert_eq!(kinds(&first), ["match", "unknown"]);
    let flag = first["flag_ids"][0].as_str().unwrap().to_string();

    let resolve = json!({"sku_id": "sku-55", "name": "Operator Tea", "price_cents": 325, "category": "drinks"});
    let (s, rec) = h.post(&format!("/v1/flags/{flag}/resolve"), resolve.clone()).await;
    assert_eq!(s, StatusCode::OK, "{rec}");
    assert_eq!(rec["sku_id"], "sku-55");
    assert_eq!(rec["reference_count"], 1);

    let (_, open) = h.get("/v1/flags?status=open").await;
    assert_eq!(open["total"], 0);
    let (_, resolved) = h.get("/v1/flags?status=resolved").await;
    assert_eq!(resolved["flags"][0]["resolved_sku_id"], "sku-55");

    let (s, body) = h.post(&format!("/v1/flags/{flag}/resolve"), resolve).await;
    assert_error(s, &body, StatusCode::CONFLICT, "flag_not_open");

    let (_, again) = h.checkout("loop").await;
    assert_eq!(kinds(&again), ["match", "match"]);
    assert_eq!(again["items"][1]["decision"]["name"], "Operator Tea");
    assert_eq!(again["items"][1]["decision"]["price_cents"], 325);
    assert_eq!(again["subtotal_cents"], 425);
}

#[tokio::test]
async fn dismiss_leaves_catalog_alone() {
    let h = Harness::new();
    h.fixture("stray", &[9]);
    let (_, r) = h.checkout("stray").await;
    let flag = r["flag_ids"][0].as_str().unwrap().to_string();
    let skus_before = h.get("/v1/skus").await.1;

    let (s, f) = h.post(&format!("/v1/flags/{flag}/dismiss"), json!({})).await;
    assert_eq!(s, StatusCode::OK, "{f}");
    assert_eq!(f["status"], "dismissed");
    assert_eq!(h.get("/v1/skus").await.1, skus_before);

    let (s, body) = h.post(&format!("/v1/flags/{flag}/dismiss"), json!({})).await;
    assert_error(s, &body, StatusCode::CONFLICT, "flag_not_open");
    let (s, body) = h.get("/v1/flags/flag-999999").await;
    assert_error(s, &body, StatusCode::NOT_FOUND, "unknown_flag");
    let (s, body) = h.post("/v1/flags/flag-999999/resolve", json!({"sku_id": "x"})).await;
    assert_error(s, &body, StatusCode::NOT_FOUND, "unknown_flag");
}

#[tokio::test]
async fn snapshot_round_trip_across_restart() {
    let h = Harness::new();
    for c in 1..=6u16 {
        h.register(&format!("sku-{c}"), c, 100 * c as u64).await;
    }
    h.fixture("snap", &[1, 42]);
    h.checkout("snap").await;
    let listing = h.get("/v1/skus?include_vector=true").await.1;
    let flags = h.get("/v1/flags").await.1;

    let (s, info) = h.post("/v1/snapshot/save", json!({})).await;
    assert_eq!(s, StatusCode::OK, "{info}");
    assert_eq!(info["sku_count"], 6);
    assert_eq!(info["flag_count"], 1);

    let h = h.restart();
    assert_eq!(h.get("/v1/skus?include_vector=true").await.1, listing);
    assert_eq!(h.get("/v1/flags").await.1, flags);

    // Mutate, then load brings the saved state back.
    h.call(Method::DELETE, "/v1/skus/sku-1", None).await;
    let (s, _) = h.post("/v1/snapshot/load", json!({})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(h.get("/v1/skus?include_vector=true").await.1, listing);
}

#[tokio::test]
async fn snapshot_failures_are_500_and_atomic() {
    let h = Harness::new();
    h.register("sku-1", 1, 100).await;
    let (s, body) = h.post("/v1/snapshot/load", json!({})).await;
    assert_error(s, &body, StatusCode::INTERNAL_SERVER_ERROR, "io_failure");

    h.post("/v1/snapshot/save", json!({})).await;
    let index = h.state.config().snapshot_path.join(shelfid_core::registry::INDEX_FILE);
    let mut bytes = std::fs::read(&index).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(&index, bytes).unwrap();
    h.register("sku-2", 2, 200).await;
    let before = h.snapshot();
    let (s, body) = h.post("/v1/snapshot/load", json!({})).await;
    assert_error(s, &body, StatusCode::INTERNAL_SERVER_ERROR, "io_failure");
    assert_eq!(h.snapshot(), before);
}

#[tokio::test]
async fn healthz_and_metrics() {
    let h = Harness::new();
    h.register("sku-1", 1, 100).await;
    h.register("sku-2", 2, 100).await;
    let (s, health) = h.get("/v1/healthz").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(health["catalog_size"], 2);
    assert_eq!(health["dim"], DIM);
    assert_eq!(health["version"], env!("CARGO_PKG_VERSION"));

    h.fixture("m", &[1, 2]);
    for _ in 0..10 {
        assert_eq!(h.checkout("m").await.0, StatusCode::OK);
    }
    h.checkout("absent").await;
    let (_, m) = h.get("/v1/metrics").await;
    assert_eq!(m["checkouts"], 10);
    assert_eq!(m["checkout_errors"], 1);
    for stage in ["detect", "crop", "embed", "search", "overhead", "total"] {
        assert_eq!(m["stages"][stage]["count"], 10, "{stage}");
        assert!(m["stages"][stage]["p95_ms"].as_f64().unwrap() >= 0.0);
    }
}

#[tokio::test]
async fn bearer_auth() {
    let h = Harness::with(|c| c.auth_token = Some("t0ken".into()));
    let (s, body) = h.get("/v1/skus").await;
    assert_error(s, &body, StatusCode::UNAUTHORIZED, "unauthorized");

    let wrong = Request::get("/v1/skus")
        .header(header::AUTHORIZATION, "Bearer nope")
        .body(Body::empty())
        .unwrap();
    let (s, body) = h.send(wrong).await;
    assert_error(s, &body, StatusCode::UNAUTHORIZED, "unauthorized");

    let right = Request::get("/v1/skus")
        .header(header::AUTHORIZATION, "Bearer t0ken")
        .body(Body::empty())
        .unwrap();
    assert_eq!(h.send(right).await.0, StatusCode::OK);
    assert_eq!(h.get("/v1/healthz").await.0, StatusCode::OK);
}

#[tokio::test]
async fn cors_preflight() {
    let h = Harness::with(|c| c.auth_token = Some("t".into()));
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/v1/skus")
        .header(header::ORIGIN, "http://console.local")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = tower::ServiceExt::oneshot(h.app.clone(), req).await.unwrap();
    assert!(resp.status().is_success());
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
}

#[tokio::test]
async fn every_error_has_an_error_body() {
    let h = Harness::with(|c| c.max_body_bytes = 1 << 16);
    let (s, body) = h.get("/v1/nothing-here").await;
    assert_error(s, &body, StatusCode::NOT_FOUND, "not_found");
    let (s, body) = h.call(Method::PUT, "/v1/skus", Some(json!({}))).await;
    assert_error(s, &body, StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed");
    let (s, body) = h.get("/v1/flags?status=sideways").await;
    assert_error(s, &body, StatusCode::BAD_REQUEST, "bad_request");

    let broken = Request::post("/v1/skus")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let (s, body) = h.send(broken).await;
    assert_error(s, &body, StatusCode::BAD_REQUEST, "bad_request");

    let huge = Request::post("/v1/checkout")
        .header(header::CONTENT_TYPE, "image/png")
        .body(Body::from(vec![0u8; 1 << 17]))
        .unwrap();
    let (s, body) = h.send(huge).await;
    assert_error(s, &body, StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large");
}

#[tokio::test]
async fn failed_mutations_change_nothing() {
    let h = Harness::new();
    h.register("sku-1", 1, 100).await;
    h.fixture("one-unknown", &[1, 60]);
    let (_, r) = h.checkout("one-unknown").await;
    let flag = r["flag_ids"][0].as_str().unwrap().to_string();
    h.post(&format!("/v1/flags/{flag}/dismiss"), json!({})).await;
    h.fixture("unlabeled", &[61]);
    std::fs::remove_file(h.state.config().fixture_dir.clone().unwrap().join("unlabeled.txt")).unwrap();

    let before = h.snapshot();
    let failing: Vec<(Method, String, Option<Value>)> = vec![
        (Method::POST, "/v1/skus".into(), Some(sku_body("sku-1", 1, 1))),
        (Method::POST, "/v1/skus".into(), Some(json!({"sku_id": "x", "name": "n", "price_cents": 1, "references": []}))),
        (Method::POST, "/v1/skus:batch".into(), Some(json!({"skus": [sku_body("ok", 3, 1), sku_body("ok", 3, 1)]}))),
        (Method::PATCH, "/v1/skus/ghost".into(), Some(json!({"price_cents": 1}))),
        (Method::DELETE, "/v1/skus/ghost".into(), None),
        (Method::POST, format!("/v1/flags/{flag}/resolve"), Some(json!({"sku_id": "late"}))),
        (Method::POST, format!("/v1/flags/{flag}/dismiss"), Some(json!({}))),
        (Method::POST, "/v1/flags/flag-424242/resolve".into(), Some(json!({"sku_id": "x"}))),
        (Method::POST, "/v1/checkout".into(), Some(json!({"fixture_id": "unlabeled"}))),
        (Method::POST, "/v1/snapshot/load".into(), Some(json!({}))),
    ];
    for (method, uri, body) in failing {
        let (s, resp) = h.call(method.clone(), &uri, body).await;
        assert!(!s.is_success(), "{method} {uri} unexpectedly succeeded: {resp}");
        assert!(resp["code"].is_string(), "{method} {uri}: {resp}");
        assert!(h.snapshot() == before, "{method} {uri} changed state");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_checkouts_agree() {
    let h = Harness::new();
    for c in 1..=5u16 {
        h.register(&format!("sku-{c}"), c, c as u64 * 10).await;
    }
    h.fixture("busy", &[1, 2, 3, 4, 5]);
    let reference = strip_timings(h.checkout("busy").await.1);
    let h = std::sync::Arc::new(h);
    let tasks: Vec<_> = (0..16)
        .map(|_| {
            let h = h.clone();
            tokio::spawn(async move { h.checkout("busy").await })
        })
        .collect();
    for t in tasks {
        let (s, r) = t.await.unwrap();
        assert_eq!(s, StatusCode::OK);
        assert_eq!(strip_timings(r), reference);
    }
}

#[tokio::test]
async fn startup_rejects_mismatched_snapshot() {
    let h = Harness::new();
    h.register("sku-1", 1, 1).await;
    h.post("/v1/snapshot/save", json!({})).await;
    let mut cfg = h.state.config().clone();
    cfg.provider = shelfid_service::ProviderConfig::LabelOracle {
        seed: 7,
        dim: DIM * 2,
        noise: 0.1,
    };
    assert!(matches!(
        shelfid_service::AppState::new(cfg),
        Err(shelfid_service::ServiceError::DimMismatch { .. })
    ));
}
