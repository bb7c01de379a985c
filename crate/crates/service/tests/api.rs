use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use stereo_core::raster::{load_image, save_mask, Image, Rect};
use stereo_core::review_loop::{parse_log, parse_records_csv, DatasetManifest, IterationRecord, LoopConfig, LogEvent};
use stereo_core::segnet::{Architecture, TrainConfig};
use stereo_core::synth::{gen_dataset, MouseSpec, SynthConfig, SynthParams};
use stereo_service::overlay::{EXCLUSION, INCLUSION};
use stereo_service::{router, AppState, ServiceConfig, API_SCHEMA_VERSION, SCHEMA_HEADER};

struct Resp {
    status: StatusCode,
    schema_header: bool,
    bytes: Vec<u8>,
}

impl Resp {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or(Value::Null)
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> Resp {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let schema_header = res.headers().get(SCHEMA_HEADER).is_some_and(|v| v == "1");
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Resp {
        status,
        schema_header,
        bytes,
    }
}

/// Two training mice and a test mouse; the first image of each training
/// mouse is accepted in the bootstrap review with its true mask.
fn corpus(dir: &Path) -> (String, Value) {
    let cfg = SynthConfig {
        params: SynthParams {
            width: 72,
            height: 72,
            frame: Rect::new(22, 22, 50, 50),
            cells: (3, 5),
            ..SynthParams::default()
        },
        mice: vec![
            MouseSpec { mouse_id: "a".into(), sections: 1, stacks: 3 },
            MouseSpec { mouse_id: "b".into(), sections: 1, stacks: 2 },
            MouseSpec { mouse_id: "t".into(), sections: 2, stacks: 2 },
        ],
        write_stacks: false,
    };
    let out = dir.join("corpus");
    let ds = gen_dataset(&cfg, &out).unwrap();
    let mut manifest = ds.manifest.clone();
    let mut bootstrap = serde_json::Map::new();
    for it in &mut manifest.items {
        if it.mouse_id == "t" {
            continue;
        }
        let accept = it.image_id.ends_with("k000");
        if accept {
            let labels = stereo_core::raster::load_labels(out.join(format!("truth/{}.png", it.image_id))).unwrap();
            let rel = format!("truth/{}_mask.png", it.image_id);
            save_mask(&labels.foreground(), out.join(&rel)).unwrap();
            it.asa_mask = Some(rel);
        }
        bootstrap.insert(it.image_id.clone(), json!(if accept { "accept" } else { "reject" }));
    }
    manifest.save(out.join("manifest.json")).unwrap();
    (out.join("manifest.json").display().to_string(), Value::Object(bootstrap))
}

fn tiny_config() -> LoopConfig {
    LoopConfig {
        train: TrainConfig {
            arch: Architecture { depth: 1, base: 2, in_channels: 1 },
            epochs: 1,
            ..TrainConfig::default()
        },
        views_per_pair: 1,
        ..LoopConfig::default()
    }
}

fn app_with(root: &Path, lease: Duration) -> (Router, Arc<AppState>) {
    let mut cfg = ServiceConfig::new(root);
    cfg.lease = lease;
    let state = AppState::open(cfg).unwrap();
    (router(state.clone()), state)
}

async fn create(app: &Router, id: &str, manifest: &str, bootstrap: &Value) -> Resp {
    call(
        app,
        "POST",
        "/runs",
        Some(json!({
            "run_id": id,
            "manifest": manifest,
            "test_mouse": "t",
            "config": tiny_config(),
            "bootstrap": bootstrap,
        })),
    )
    .await
}

async fn wait_for(app: &Router, id: &str, status: &str) -> Value {
    for _ in 0..600 {
        let s = call(app, "GET", &format!("/runs/{id}"), None).await.json();
        if s["status"] == status && s["job"]["running"] == false {
            return s;
        }
        assert!(s["job"]["error"].is_null(), "job failed: {}", s["job"]["error"]);
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("run {id} never reached {status}");
}

#[tokio::test]
async fn create_run_validation() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, bootstrap) = corpus(dir.path());
    let (app, _) = app_with(&dir.path().join("runs"), Duration::from_secs(120));

    let r = create(&app, "r1", &manifest, &bootstrap).await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert!(r.schema_header);
    let body = r.json();
    assert_eq!(body["schema_version"], API_SCHEMA_VERSION);
    assert_eq!(body["run_id"], "r1");
    assert_eq!(body["status"], "idle");
    assert_eq!(body["partition"], json!({ "train": 2, "active": 3, "test": 2 }));

    assert_eq!(create(&app, "r1", &manifest, &bootstrap).await.status, StatusCode::CONFLICT);

    let r = create(&app, "../x", &manifest, &bootstrap).await;
    assert_eq!((r.status, r.json()["field"].clone()), (StatusCode::BAD_REQUEST, json!("run_id")));

    // An item without an annotation path.
    let mut m = DatasetManifest::load(&manifest).unwrap();
    m.items[2].annotation.clear();
    let broken = dir.path().join("corpus/broken.json");
    m.save(&broken).unwrap();
    let r = create(&app, "r2", &broken.display().to_string(), &bootstrap).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.json()["field"], "items[2].annotation");
    assert_eq!(r.json()["schema_version"], API_SCHEMA_VERSION);

    let r = create(&app, "r3", "/nonexistent/manifest.json", &bootstrap).await;
    assert_eq!((r.status, r.json()["field"].clone()), (StatusCode::BAD_REQUEST, json!("manifest")));

    let r = call(&app, "POST", "/runs", Some(json!({ "run_id": "x" }))).await;
    assert_eq!((r.status, r.json()["field"].clone()), (StatusCode::BAD_REQUEST, json!("body")));

    assert_eq!(call(&app, "GET", "/runs/nope", None).await.status, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/runs/nope/metrics", None).await.status, StatusCode::NOT_FOUND);
    let list = call(&app, "GET", "/runs", None).await.json();
    assert_eq!(list["runs"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn review_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, bootstrap) = corpus(dir.path());
    let root = dir.path().join("runs");
    let (app, _) = app_with(&root, Duration::from_secs(120));
    assert_eq!(create(&app, "run", &manifest, &bootstrap).await.status, StatusCode::CREATED);

    let r = call(&app, "GET", "/runs/run/queue/next", None).await;
    assert_eq!(r.status, StatusCode::CONFLICT);

    let r = call(&app, "POST", "/runs/run/iterate", None).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    assert_eq!(r.json()["iteration"], 1);
    let s = wait_for(&app, "run", "awaiting-review").await;
    assert_eq!(s["queue_remaining"], 3);

    // Deterministic order with leases per reviewer.
    let first = call(&app, "GET", "/runs/run/queue/next?reviewer=ann", None).await.json();
    assert_eq!(first["image_id"], "ma_s1_k001");
    assert_eq!(first["status"], "pending");
    assert_eq!(first["urls"]["overlay"], "/runs/run/images/ma_s1_k001/overlay");
    let again = call(&app, "GET", "/runs/run/queue/next?reviewer=ann", None).await.json();
    assert_eq!(again["image_id"], "ma_s1_k001");
    let other = call(&app, "GET", "/runs/run/queue/next?reviewer=bob", None).await.json();
    assert_eq!(other["image_id"], "ma_s1_k002");

    let review = |id: &str, v: &str| json!({ "image_id": id, "verdict": v, "reviewer": "ann" });
    let r = call(&app, "POST", "/runs/run/review", Some(review("ma_s1_k001", "accept"))).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!((r.json()["outcome"].clone(), r.json()["remaining"].clone()), (json!("recorded"), json!(2)));
    let r = call(&app, "POST", "/runs/run/review", Some(review("ma_s1_k001", "accept"))).await;
    assert_eq!((r.status, r.json()["outcome"].clone()), (StatusCode::OK, json!("duplicate")));
    let r = call(&app, "POST", "/runs/run/review", Some(review("ma_s1_k001", "reject"))).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let r = call(&app, "POST", "/runs/run/review", Some(review("ma_s1_k000", "reject"))).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = call(&app, "POST", "/runs/run/review", Some(json!({ "image_id": "x", "verdict": "maybe" }))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let q = call(&app, "GET", "/runs/run/queue", None).await.json();
    let statuses: Vec<&str> = q["items"].as_array().unwrap().iter().map(|i| i["status"].as_str().unwrap()).collect();
    assert_eq!(statuses, vec!["accepted", "pending", "pending"]);

    // Images.
    let r = call(&app, "GET", "/runs/run/images/ma_s1_k002/mask", None).await;
    assert_eq!(r.status, StatusCode::OK);
    let stored = std::fs::read(root.join("run/predictions/iter_1/ma_s1_k002.png")).unwrap();
    assert_eq!(r.bytes, stored);
    let r = call(&app, "GET", "/runs/run/images/ma_s1_k002/overlay", None).await;
    assert_eq!(r.status, StatusCode::OK);
    let p = dir.path().join("overlay.png");
    std::fs::write(&p, &r.bytes).unwrap();
    let ov: Image<f32> = load_image(&p).unwrap();
    assert_eq!(ov.channels(), 3);
    let px: Vec<[f32; 3]> = ov.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    assert!(px.contains(&INCLUSION) && px.contains(&EXCLUSION));
    let r = call(&app, "GET", "/runs/run/images/ma_s1_k002/edf", None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(&r.bytes[1..4], b"PNG");
    let r = call(&app, "GET", "/runs/run/images/ma_s1_k002/annotation", None).await;
    assert_eq!(r.json()["image_id"], "ma_s1_k002");
    assert_eq!(call(&app, "GET", "/runs/run/images/ma_s1_k002/bogus", None).await.status, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/runs/run/images/zz/edf", None).await.status, StatusCode::NOT_FOUND);

    // Advancing with undecided items needs force.
    let r = call(&app, "POST", "/runs/run/iterate", Some(json!({}))).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.json()["pending"], json!(["ma_s1_k002", "mb_s1_k001"]));
    let r = call(&app, "POST", "/runs/run/review", Some(review("ma_s1_k002", "reject"))).await;
    assert_eq!(r.status, StatusCode::OK);
    let r = call(&app, "POST", "/runs/run/iterate", Some(json!({ "force": true }))).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    let s = wait_for(&app, "run", "awaiting-review").await;
    assert_eq!(s["partition"], json!({ "train": 3, "active": 2, "test": 2 }));
    assert_eq!(s["queue_remaining"], 2);

    // Forced items got no verdict.
    let log = parse_log(&std::fs::read_to_string(root.join("run/decisions.jsonl")).unwrap()).unwrap();
    let it1: Vec<String> = log
        .iter()
        .filter_map(|e| match e {
            LogEvent::Decision(d) if d.iteration == 1 => Some(d.image_id.clone()),
            _ => None,
        })
        .collect();
    assert_eq!(it1, vec!["ma_s1_k001", "ma_s1_k002"]);

    // Metrics agree with records.csv.
    let m = call(&app, "GET", "/runs/run/metrics", None).await.json();
    let recs: Vec<IterationRecord> = serde_json::from_value(m["records"].clone()).unwrap();
    let csv = parse_records_csv(&std::fs::read_to_string(root.join("run/records.csv")).unwrap()).unwrap();
    assert_eq!(recs, csv);
    assert_eq!(recs.len(), 1);
    assert_eq!((recs[0].n_accepted, recs[0].train_size), (1, 216));
    assert_eq!(m["evaluations"].as_array().unwrap().len(), 2);
    assert!(m["evaluations"][0]["sections"].as_array().is_some());

    // Reject everything: one record, sets unchanged.
    for id in ["ma_s1_k002", "mb_s1_k001"] {
        call(&app, "POST", "/runs/run/review", Some(review(id, "reject"))).await;
    }
    let r = call(&app, "GET", "/runs/run/queue/next", None).await;
    assert_eq!(r.status, StatusCode::NO_CONTENT);
    assert!(r.schema_header);
    assert_eq!(call(&app, "POST", "/runs/run/iterate", None).await.status, StatusCode::ACCEPTED);
    let s = wait_for(&app, "run", "awaiting-review").await;
    assert_eq!(s["partition"], json!({ "train": 3, "active": 2, "test": 2 }));
    assert_eq!(s["records"].as_array().unwrap().len(), 2);
    assert_eq!(s["records"][1]["n_accepted"], 0);
}

#[tokio::test]
async fn restart_restores_queue() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, bootstrap) = corpus(dir.path());
    let root = dir.path().join("runs");
    let (app, _) = app_with(&root, Duration::from_secs(120));
    create(&app, "run", &manifest, &bootstrap).await;
    call(&app, "POST", "/runs/run/iterate", None).await;
    wait_for(&app, "run", "awaiting-review").await;
    let r = call(&app, "POST", "/runs/run/review", Some(json!({ "image_id": "mb_s1_k001", "verdict": "accept" }))).await;
    assert_eq!(r.status, StatusCode::OK);
    let before = call(&app, "GET", "/runs/run/queue", None).await.json();
    drop(app);

    let (app, _) = app_with(&root, Duration::from_secs(120));
    let after = call(&app, "GET", "/runs/run/queue", None).await.json();
    assert_eq!(before, after);
    let next = call(&app, "GET", "/runs/run/queue/next", None).await.json();
    assert_eq!(next["image_id"], "ma_s1_k001");
}

#[tokio::test]
async fn expired_leases_requeue() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, bootstrap) = corpus(dir.path());
    let (app, _) = app_with(&dir.path().join("runs"), Duration::from_millis(0));
    create(&app, "run", &manifest, &bootstrap).await;
    call(&app, "POST", "/runs/run/iterate", None).await;
    wait_for(&app, "run", "awaiting-review").await;
    let a = call(&app, "GET", "/runs/run/queue/next?reviewer=a", None).await.json();
    let b = call(&app, "GET", "/runs/run/queue/next?reviewer=b", None).await.json();
    assert_eq!(a["image_id"], b["image_id"]);
}

#[tokio::test]
async fn unknown_route_has_schema() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app_with(dir.path(), Duration::from_secs(1));
    let r = call(&app, "GET", "/nope", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert!(r.schema_header);
    assert_eq!(r.json()["schema_version"], API_SCHEMA_VERSION);
    let h = call(&app, "GET", "/health", None).await;
    assert_eq!(h.json()["status"], "ok");
}
