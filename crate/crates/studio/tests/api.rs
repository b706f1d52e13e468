use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use sketchedit_core::{Camera, RadianceField, Vec3};
use sketchedit_studio::{app, Settings, Studio};
use tower::ServiceExt;

fn studio() -> Router {
    app(Arc::new(Studio::new(Settings { preview_every: 5, preview_size: 32, ..Default::default() })), None)
}

async fn call(app: &Router, method: Method, uri: &str, body: Body, content_type: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).header(header::CONTENT_TYPE, content_type).body(body).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, to_bytes(res.into_body(), usize::MAX).await.unwrap().to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    call(app, Method::GET, uri, Body::empty(), "application/json").await
}

async fn post_json(app: &Router, uri: &str, v: Value) -> (StatusCode, Value) {
    let (s, b) = call(app, Method::POST, uri, Body::from(v.to_string()), "application/json").await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn camera(azimuth: f64, res: usize) -> Camera {
    Camera::orbit(azimuth, 0.0, 3.2, Vec3::zeros(), res, res, 40f64.to_radians(), 0.1, 10.0).unwrap()
}

fn encode_query(s: &str) -> String {
    s.bytes()
        .map(|b| if b.is_ascii_alphanumeric() || b"-_.~".contains(&b) { (b as char).to_string() } else { format!("%{b:02X}") })
        .collect()
}

fn render_uri(id: &str, cam: &Camera, extra: &str) -> String {
    format!("/api/v1/session/{id}/render?camera={}{extra}", encode_query(&serde_json::to_string(cam).unwrap()))
}

async fn new_session(app: &Router, res: usize) -> String {
    let (s, v) = post_json(app, "/api/v1/session", json!({ "scene": "sphere", "resolution": res })).await;
    assert_eq!(s, StatusCode::CREATED);
    v["id"].as_str().unwrap().to_string()
}

/// A closed square around the image center.
fn square(res: usize) -> Vec<[f64; 2]> {
    let (a, b) = (res as f64 * 0.3, res as f64 * 0.7);
    vec![[a, a], [b, a], [b, b], [a, b], [a, a]]
}

async fn add_sketches(app: &Router, id: &str, res: usize) {
    for az in [0.0, 90.0] {
        let (s, v) = post_json(app, &format!("/api/v1/session/{id}/sketch"), json!({ "camera": camera(az, res), "strokes": [square(res)] })).await;
        assert_eq!(s, StatusCode::OK, "{v}");
    }
}

fn quick_edit(iterations: usize) -> Value {
    json!({ "config": { "iterations": iterations, "warmup_iters": iterations / 2, "prune_period": 5, "rays_per_iter": 64 } })
}

async fn wait_terminal(app: &Router, job: &str) -> String {
    let start = Instant::now();
    loop {
        let (_, b) = get(app, &format!("/api/v1/job/{job}")).await;
        let v: Value = serde_json::from_slice(&b).unwrap();
        let status = v["status"].as_str().unwrap().to_string();
        if matches!(status.as_str(), "done" | "failed" | "cancelled") {
            return status;
        }
        assert!(start.elapsed() < Duration::from_secs(120), "job did not finish");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

#[tokio::test]
async fn session_lifecycle_and_render() {
    let app = studio();
    let (s, _) = get(&app, "/api/v1/health").await;
    assert_eq!(s, StatusCode::OK);
    let id = new_session(&app, 16).await;

    let cam = camera(30.0, 24);
    let (s, a) = get(&app, &render_uri(&id, &cam, "")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&a[..4], b"\x89PNG");
    let (_, b) = get(&app, &render_uri(&id, &cam, "")).await;
    assert_eq!(a, b, "repeat renders must be byte-identical");
    for ch in ["rgba", "alpha", "depth"] {
        let (s, _) = get(&app, &render_uri(&id, &cam, &format!("&channels={ch}"))).await;
        assert_eq!(s, StatusCode::OK, "{ch}");
    }

    let (s, _) = get(&app, &render_uri(&id, &cam, "&channels=normals")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = get(&app, &format!("/api/v1/session/{id}/render?camera=%7B%7D")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = get(&app, &render_uri("nope", &cam, "")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, skfd) = get(&app, &format!("/api/v1/session/{id}/field.skfd")).await;
    assert_eq!(s, StatusCode::OK);
    let field = RadianceField::from_bytes(&skfd).unwrap();
    assert_eq!(field.resolution(), [16; 3]);

    let (s, b) = call(&app, Method::POST, "/api/v1/session", Body::from(skfd.clone()), "application/octet-stream").await;
    assert_eq!(s, StatusCode::CREATED);
    let copy: Value = serde_json::from_slice(&b).unwrap();
    let (_, again) = get(&app, &format!("/api/v1/session/{}/field.skfd", copy["id"].as_str().unwrap())).await;
    assert_eq!(again, skfd);

    let (s, _) = call(&app, Method::DELETE, &format!("/api/v1/session/{id}"), Body::empty(), "application/json").await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, _) = get(&app, &format!("/api/v1/session/{id}")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn sketches_closed_and_open() {
    let app = studio();
    let id = new_session(&app, 16).await;
    let uri = format!("/api/v1/session/{id}/sketch");
    let (s, v) = post_json(&app, &uri, json!({ "camera": camera(0.0, 32), "strokes": [square(32)] })).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["index"], 0);
    assert!(v["warning"].is_null());
    assert!(v["edit_bbox"]["min"].is_array());

    let (s, v) = post_json(&app, &uri, json!({ "camera": camera(90.0, 32), "strokes": [square(32)] })).await;
    assert_eq!(s, StatusCode::OK);
    let (lo, hi) = (v["edit_bbox"]["min"].as_array().unwrap(), v["edit_bbox"]["max"].as_array().unwrap());
    assert!(lo.iter().zip(hi).all(|(a, b)| a.as_f64().unwrap() < b.as_f64().unwrap()), "{v}");

    let (s, v) = post_json(&app, &uri, json!({ "camera": camera(45.0, 32), "strokes": [[[4.0, 4.0], [28.0, 28.0]]] })).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["warning"], "open_curve");

    let (s, _) = post_json(&app, &uri, json!({ "camera": camera(0.0, 32) })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, _) = call(&app, Method::DELETE, &format!("{uri}/2"), Body::empty(), "application/json").await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call(&app, Method::DELETE, &format!("{uri}/5"), Body::empty(), "application/json").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (_, b) = get(&app, &format!("/api/v1/session/{id}")).await;
    assert_eq!(serde_json::from_slice::<Value>(&b).unwrap()["sketches"], 2);
}

#[tokio::test]
async fn edit_job_streams_to_done() {
    let app = studio();
    let id = new_session(&app, 16).await;
    let (s, _) = post_json(&app, &format!("/api/v1/session/{id}/edit"), quick_edit(20)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "editing without sketches");

    add_sketches(&app, &id, 32).await;
    let (s, _) = post_json(&app, &format!("/api/v1/session/{id}/edit"), json!({ "config": { "iterations": 0 } })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, _) = get(&app, "/api/v1/job/nope/events").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, v) = post_json(&app, &format!("/api/v1/session/{id}/edit"), quick_edit(20)).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let job = v["job_id"].as_str().unwrap().to_string();

    let (s, b) = get(&app, v["events_url"].as_str().unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let text = String::from_utf8(b).unwrap();
    assert!(text.contains("event: progress"), "{text}");
    let last = text.lines().filter(|l| l.starts_with("data:")).last().unwrap();
    let last: Value = serde_json::from_str(last.trim_start_matches("data:").trim()).unwrap();
    assert_eq!(last["status"], "done", "{text}");

    assert_eq!(wait_terminal(&app, &job).await, "done");
    let (s, png) = get(&app, &format!("/api/v1/job/{job}/preview.png")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&png[..4], b"\x89PNG");
    let (s, v) = post_json(&app, &format!("/api/v1/job/{job}/cancel"), json!({})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "done");

    let (s, b) = get(&app, &format!("/api/v1/session/{id}/eval")).await;
    assert_eq!(s, StatusCode::OK);
    let report: Value = serde_json::from_slice(&b).unwrap();
    for k in ["psnr", "ios", "ssim"] {
        assert_eq!(report[k]["per_view"].as_array().unwrap().len(), 2, "{k}");
    }

    let (s, v) = post_json(&app, &format!("/api/v1/session/{id}/use_as_base"), json!({})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["sketches"], 0);
    assert_eq!(v["has_edit"], false);
    let (s, _) = post_json(&app, &format!("/api/v1/session/{id}/use_as_base"), json!({})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn busy_session_conflicts_and_cancels() {
    let app = studio();
    let id = new_session(&app, 16).await;
    add_sketches(&app, &id, 32).await;
    let (s, v) = post_json(&app, &format!("/api/v1/session/{id}/edit"), quick_edit(100_000)).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let job = v["job_id"].as_str().unwrap().to_string();

    let (s, _) = post_json(&app, &format!("/api/v1/session/{id}/edit"), quick_edit(20)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = post_json(&app, &format!("/api/v1/session/{id}/carve"), json!({})).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, _) = post_json(&app, &format!("/api/v1/job/{job}/cancel"), json!({})).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(wait_terminal(&app, &job).await, "cancelled");
    let (_, b) = get(&app, &format!("/api/v1/job/{job}/events")).await;
    assert!(String::from_utf8(b).unwrap().contains("\"cancelled\""));

    let (s, v) = post_json(&app, &format!("/api/v1/session/{id}/carve"), json!({})).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["carved"].as_u64().unwrap() > 0);
    let (_, b) = get(&app, &format!("/api/v1/session/{id}")).await;
    assert_eq!(serde_json::from_slice::<Value>(&b).unwrap()["has_edit"], true);
}

#[tokio::test]
async fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let settings = || Settings { state_dir: Some(dir.path().to_path_buf()), ..Default::default() };
    let app = app(Arc::new(Studio::new(settings())), None);
    let id = new_session(&app, 12).await;
    add_sketches(&app, &id, 24).await;
    let (_, before) = get(&app, &format!("/api/v1/session/{id}/field.skfd")).await;

    let studio = Studio::new(settings());
    studio.restore();
    let app = sketchedit_studio::app(Arc::new(studio), None);
    let (s, b) = get(&app, &format!("/api/v1/session/{id}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Value>(&b).unwrap()["sketches"], 2);
    let (_, after) = get(&app, &format!("/api/v1/session/{id}/field.skfd")).await;
    assert_eq!(before, after);
}
