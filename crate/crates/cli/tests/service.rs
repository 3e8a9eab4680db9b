mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use common::{built_db, ok, pixelnn, query, s};
use pixelnn::ExemplarDatabase;
use pixelnn_cli::service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(
    app: &axum::Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn setup(n: usize) -> (tempfile::TempDir, std::path::PathBuf, axum::Router, String) {
    let tmp = tempfile::tempdir().unwrap();
    let db_path = built_db(tmp.path(), n);
    let db = ExemplarDatabase::load(&db_path).unwrap();
    let input = STANDARD.encode(std::fs::read(query(tmp.path())).unwrap());
    (tmp, db_path, router(AppState::new(db)), input)
}

#[tokio::test]
async fn health_and_exemplars() {
    let (_tmp, _, app, _) = setup(3);
    let (status, v) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    let (status, v) = call(&app, "GET", "/api/exemplars", None).await;
    assert_eq!(status, StatusCode::OK);
    let list = v.as_array().unwrap();
    assert_eq!(list.len(), 3);
    assert_eq!(list[1]["id"], 1);
    assert_eq!(list[1]["name"], "ex01");
    assert_eq!(list[1]["tags"], json!(["all", "group1"]));
    let png = STANDARD
        .decode(list[0]["thumbnail"].as_str().unwrap())
        .unwrap();
    assert_eq!(pixelnn::decode_png(&png).unwrap().dimensions(), (16, 16));
}

#[tokio::test]
async fn invalid_requests_are_rejected() {
    let (_tmp, _, app, input) = setup(3);
    let (status, v) = call(
        &app,
        "POST",
        "/api/synthesize",
        Some(json!({ "request": { "tags": ["siamese"] }, "input": input })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"]
        .as_str()
        .unwrap()
        .contains("empty exemplar selection"));

    for request in [
        json!({ "ks": [0] }),
        json!({ "ts": [] }),
        json!({ "bogus": 1 }),
    ] {
        let (status, v) = call(
            &app,
            "POST",
            "/api/synthesize",
            Some(json!({ "request": request, "input": input })),
        )
        .await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{request}");
        assert!(v["error"].is_string());
    }
    let (status, _) = call(
        &app,
        "POST",
        "/api/synthesize",
        Some(json!({ "input": "not base64!" })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, v) = call(
        &app,
        "POST",
        "/api/synthesize",
        Some(json!({ "request": { "select": "oracle" }, "input": input })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("ground truth"));

    let (status, v) = call(&app, "GET", "/api/result/999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(v["error"].is_string());
    let (status, _) = call(&app, "GET", "/api/result/abc", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn result_has_full_grid() {
    let (_tmp, _, app, input) = setup(3);
    let body = json!({ "request": { "ks": [1, 2, 3], "ts": [1, 3, 5, 16], "ids": [0, 2] }, "input": input });
    let (status, v) = call(&app, "POST", "/api/synthesize", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "done");
    let job = v["job"].as_str().unwrap().to_string();
    let (status, r) = call(&app, "GET", &format!("/api/result/{job}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["status"], "done");
    let cands = r["candidates"].as_array().unwrap();
    assert_eq!(cands.len(), 12);
    assert_eq!(r["manifest"]["candidate_count"], 12);
    assert_eq!(r["manifest"]["exemplar_ids"], json!([0, 2]));
    for c in cands {
        let map = STANDARD.decode(c["id_map"].as_str().unwrap()).unwrap();
        let ids = pixelnn::decode_png(&map).unwrap();
        assert_eq!(ids.dimensions(), (16, 16));
        // R carries the low id byte; only exemplars 0 and 2 are allowed
        assert!(ids
            .data()
            .chunks(3)
            .all(|p| p[0] == 0.0 || p[0] == 2.0 / 255.0));
        assert!(c["exemplars_used"]
            .as_array()
            .unwrap()
            .iter()
            .all(|id| id == 0 || id == 2));
    }
    // K=1, T=1 copies from a single exemplar
    assert_eq!(cands[0]["k"], 1);
    assert_eq!(cands[0]["t"], 1);
    assert_eq!(cands[0]["exemplars_used"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn async_jobs_can_be_polled() {
    let (_tmp, _, app, input) = setup(3);
    let body = json!({ "request": { "ks": [1, 2], "ts": [1, 3] }, "input": input, "async": true });
    let (status, v) = call(&app, "POST", "/api/synthesize", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    let job = v["job"].as_str().unwrap().to_string();
    let mut done = None;
    for _ in 0..600 {
        let (status, r) = call(&app, "GET", &format!("/api/result/{job}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if r["status"] == "done" {
            done = Some(r);
            break;
        }
        assert_eq!(r["status"], "running");
        tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    }
    assert_eq!(
        done.expect("job finished")["candidates"]
            .as_array()
            .unwrap()
            .len(),
        4
    );
}

#[tokio::test]
async fn service_matches_cli_bytes() {
    let (tmp, db_path, app, input) = setup(5);
    let q = tmp.path().join("query.png");
    let out = tmp.path().join("cli_out");
    ok(pixelnn(&[
        "synthesize",
        "--db",
        s(&db_path),
        "--input",
        s(&q),
        "--k-list",
        "1,2,5",
        "--t-list",
        "1,3,16",
        "--tags",
        "group0,group1",
        "-o",
        s(&out),
    ]));
    let body = json!({
        "request": { "ks": [1, 2, 5], "ts": [1, 3, 16], "tags": ["group0", "group1"] },
        "input": input,
    });
    let (_, v) = call(&app, "POST", "/api/synthesize", Some(body)).await;
    let (_, r) = call(
        &app,
        "GET",
        &format!("/api/result/{}", v["job"].as_str().unwrap()),
        None,
    )
    .await;
    let cands = r["candidates"].as_array().unwrap();
    assert_eq!(cands.len(), 9);
    for c in cands {
        let name = c["name"].as_str().unwrap();
        let from_service = STANDARD.decode(c["image"].as_str().unwrap()).unwrap();
        let from_cli = std::fs::read(out.join(format!("{name}.png"))).unwrap();
        assert_eq!(from_service, from_cli, "{name}");
    }
    let cli_manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(cli_manifest, r["manifest"]);
}
