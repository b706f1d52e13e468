//! HTTP handlers under `/api/v1`.

use std::convert::Infallible;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use base64::Engine as _;
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};

use sketchedit_core::editor::{EditConfig, EditError};
use sketchedit_core::field::{synth_scene, SceneKind};
use sketchedit_core::guidance::{GuidanceConfig, ProviderSpec};
use sketchedit_core::imageio::{decode_mask_png, encode_gray_png, encode_mask_png, encode_png};
use sketchedit_core::metrics::evaluate;
use sketchedit_core::render::{render_view, RenderOptions};
use sketchedit_core::sketch::{fill_scribble, ScribbleInput};
use sketchedit_core::{Aabb, Camera, RadianceField, SketchView};

use crate::jobs::{JobEvent, Session, StartError, Studio};

/// Largest image side the render endpoint accepts.
pub const MAX_RENDER_SIDE: usize = 1024;

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl ToString) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.to_string())
}

fn not_found(what: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("unknown {what}"))
}

fn conflict(msg: &str) -> ApiError {
    ApiError(StatusCode::CONFLICT, msg.into())
}

fn internal(msg: impl ToString) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, msg.to_string())
}

type ApiResult<T> = Result<T, ApiError>;
type AppState = Arc<Studio>;

pub fn routes() -> Router<AppState> {
    Router::new()
        .route("/api/v1/health", get(|| async { Json(json!({ "ok": true })) }))
        .route("/api/v1/session", post(create_session))
        .route("/api/v1/session/{id}", get(session_info).delete(delete_session))
        .route("/api/v1/session/{id}/render", get(render))
        .route("/api/v1/session/{id}/sketch", post(add_sketch))
        .route("/api/v1/session/{id}/sketch/{index}", delete(delete_sketch))
        .route("/api/v1/session/{id}/edit", post(start_edit))
        .route("/api/v1/session/{id}/carve", post(carve))
        .route("/api/v1/session/{id}/eval", get(eval))
        .route("/api/v1/session/{id}/field.skfd", get(download_field))
        .route("/api/v1/session/{id}/use_as_base", post(use_as_base))
        .route("/api/v1/job/{id}", get(job_info))
        .route("/api/v1/job/{id}/events", get(job_events))
        .route("/api/v1/job/{id}/cancel", post(cancel_job))
        .route("/api/v1/job/{id}/preview.png", get(job_preview))
}

fn session(studio: &Studio, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
    studio.session(id).ok_or_else(|| not_found("session"))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(internal)
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn bbox_json(b: &Aabb) -> Value {
    json!({ "min": b.min, "max": b.max, "corners": b.corners().iter().map(|c| [c.x, c.y, c.z]).collect::<Vec<_>>() })
}

fn edit_bbox(s: &Session) -> Option<Aabb> {
    if s.sketches.views().is_empty() {
        return None;
    }
    s.sketches.edit_bbox(s.base.bbox(), s.base.occupancy().resolution()).ok()
}

fn describe(s: &Session) -> Value {
    json!({
        "id": s.id,
        "resolution": s.base.resolution(),
        "bbox": s.base.bbox(),
        "sketches": s.sketches.views().len(),
        "edit_bbox": edit_bbox(s).as_ref().map(bbox_json),
        "has_edit": s.current.is_some(),
        "job": s.job.as_ref().map(|j| json!({ "id": j.id, "status": j.status() })),
    })
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthRequest {
    scene: SceneKind,
    resolution: usize,
    half_extent: f64,
}

impl Default for SynthRequest {
    fn default() -> Self {
        Self { scene: SceneKind::Sphere, resolution: 64, half_extent: 1.0 }
    }
}

/// Body is either an SKFD checkpoint (`application/octet-stream`) or a JSON synth request.
async fn create_session(State(studio): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let binary = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/octet-stream"));
    let field = if binary {
        blocking(move || RadianceField::from_bytes(&body)).await?.map_err(bad_request)?
    } else {
        let req: SynthRequest = if body.is_empty() { SynthRequest::default() } else { serde_json::from_slice(&body).map_err(bad_request)? };
        if !(2..=256).contains(&req.resolution) || !(req.half_extent > 0.0) {
            return Err(bad_request("resolution must lie in 2..=256 and half_extent be positive"));
        }
        blocking(move || synth_scene(req.scene, req.resolution, Aabb::centered_cube(req.half_extent))).await?.map_err(bad_request)?
    };
    let s = Session::new(uuid::Uuid::new_v4().to_string(), field);
    let body = describe(&s);
    studio.persist(&s);
    studio.insert_session(s);
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn session_info(State(studio): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = session(&studio, &id)?;
    let s = s.lock().unwrap();
    Ok(Json(describe(&s)))
}

async fn delete_session(State(studio): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let s = studio.sessions.write().unwrap().remove(&id).ok_or_else(|| not_found("session"))?;
    if let Some(j) = &s.lock().unwrap().job {
        j.cancel();
    }
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct RenderQuery {
    /// Camera JSON.
    camera: String,
    #[serde(default)]
    channels: Option<String>,
    /// `current` (default) or `base`.
    #[serde(default)]
    field: Option<String>,
}

fn pick_field(s: &Session, which: Option<&str>) -> ApiResult<Arc<RadianceField>> {
    match which.unwrap_or("current") {
        "current" => Ok(s.current_field()),
        "base" => Ok(s.base.clone()),
        other => Err(bad_request(format!("unknown field `{other}`, expected current or base"))),
    }
}

async fn render(State(studio): State<AppState>, Path(id): Path<String>, Query(q): Query<RenderQuery>) -> ApiResult<Response> {
    let field = {
        let s = session(&studio, &id)?;
        let s = s.lock().unwrap();
        pick_field(&s, q.field.as_deref())?
    };
    let cam: Camera = serde_json::from_str(&q.camera).map_err(|e| bad_request(format!("bad camera: {e}")))?;
    if cam.width() > MAX_RENDER_SIDE || cam.height() > MAX_RENDER_SIDE {
        return Err(bad_request(format!("image sides are limited to {MAX_RENDER_SIDE}")));
    }
    let channels = q.channels.unwrap_or_else(|| "rgb".into());
    if !matches!(channels.as_str(), "rgb" | "rgba" | "alpha" | "depth") {
        return Err(bad_request(format!("unknown channels `{channels}`")));
    }
    let bytes = blocking(move || {
        let out = render_view(&field, &cam, &RenderOptions::for_field(&field));
        let (w, h) = (out.width, out.height);
        match channels.as_str() {
            "rgb" => encode_png(w, h, &out.rgb, None),
            "rgba" => encode_png(w, h, &out.rgb, Some(&out.alpha)),
            "alpha" => encode_gray_png(w, h, &out.alpha),
            _ => {
                let span = cam.far() - cam.near();
                let d: Vec<f64> = out
                    .depth
                    .iter()
                    .zip(&out.alpha)
                    .map(|(&d, &a)| if a > 1e-3 { 1.0 - (d - cam.near()) / span } else { 0.0 })
                    .collect();
                encode_gray_png(w, h, &d)
            }
        }
    })
    .await?
    .map_err(internal)?;
    Ok(png(bytes))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SketchRequest {
    camera: Camera,
    #[serde(default)]
    strokes: Option<Vec<Vec<[f64; 2]>>>,
    /// Base64 PNG, white inside.
    #[serde(default)]
    mask_png: Option<String>,
}

async fn add_sketch(State(studio): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let s = session(&studio, &id)?;
    let req: SketchRequest = serde_json::from_slice(&body).map_err(bad_request)?;
    let (w, h) = (req.camera.width(), req.camera.height());
    let input = match (req.strokes, req.mask_png) {
        (Some(strokes), None) => ScribbleInput::Strokes(strokes),
        (None, Some(png)) => {
            let bytes = base64::engine::general_purpose::STANDARD.decode(png).map_err(bad_request)?;
            ScribbleInput::Bitmap(decode_mask_png(&bytes).map_err(bad_request)?)
        }
        _ => return Err(bad_request("give exactly one of strokes or mask_png")),
    };
    let filled = fill_scribble(&input, w, h).map_err(bad_request)?;
    let view = SketchView::new(req.camera, filled.mask.clone()).map_err(bad_request)?;
    let mut s = s.lock().unwrap();
    s.sketches.push(view);
    studio.persist(&s);
    Ok(Json(json!({
        "index": s.sketches.views().len() - 1,
        "mask_png": b64(&encode_mask_png(&filled.mask).map_err(internal)?),
        "warning": filled.open_curve.then_some("open_curve"),
        "edit_bbox": edit_bbox(&s).as_ref().map(bbox_json),
    })))
}

async fn delete_sketch(State(studio): State<AppState>, Path((id, index)): Path<(String, usize)>) -> ApiResult<Json<Value>> {
    let s = session(&studio, &id)?;
    let mut s = s.lock().unwrap();
    s.sketches.remove(index).ok_or_else(|| not_found("sketch"))?;
    studio.persist(&s);
    Ok(Json(json!({ "sketches": s.sketches.views().len(), "edit_bbox": edit_bbox(&s).as_ref().map(bbox_json) })))
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct EditRequest {
    config: EditConfig,
    guidance: GuidanceConfig,
    provider: Option<ProviderSpec>,
}

async fn start_edit(State(studio): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let sess = session(&studio, &id)?;
    let req: EditRequest = if body.is_empty() { EditRequest::default() } else { serde_json::from_slice(&body).map_err(bad_request)? };
    let (base, bbox, views) = {
        let s = sess.lock().unwrap();
        if s.running() {
            return Err(conflict("a job is already running in this session"));
        }
        if s.sketches.views().is_empty() {
            return Err(bad_request("add at least one sketch before editing"));
        }
        let bbox = s.sketches.edit_bbox(s.base.bbox(), s.base.occupancy().resolution()).map_err(bad_request)?;
        (s.base.clone(), bbox, s.sketches.views().len())
    };
    req.config.validate().map_err(bad_request)?;
    let spec = req.provider.unwrap_or_else(|| studio.settings.default_provider.clone());
    let provider = blocking(move || spec.build(&base, &bbox)).await?.map_err(bad_request)?;
    let job = studio.start_job(&sess, req.config, req.guidance, provider).map_err(|e| match e {
        StartError::Busy => conflict("a job is already running in this session"),
        StartError::Edit(e @ (EditError::Config(_) | EditError::Sketch(_) | EditError::Guidance(_) | EditError::Field(_))) => {
            bad_request(e)
        }
        StartError::Edit(e) => internal(e),
    })?;
    let warnings: Vec<&str> = if views < 2 { vec!["fewer than two sketches leave the edit region under-constrained"] } else { vec![] };
    let body = json!({
        "job_id": job.id,
        "events_url": format!("/api/v1/job/{}/events", job.id),
        "warnings": warnings,
    });
    Ok((StatusCode::ACCEPTED, Json(body)).into_response())
}

async fn job_info(State(studio): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let job = studio.job(&id).ok_or_else(|| not_found("job"))?;
    let progress = job.last_progress();
    Ok(Json(json!({
        "id": job.id,
        "session": job.session,
        "status": job.status(),
        "iterations": job.iterations,
        "iteration": progress.map_or(0, |p| p.0),
        "losses": progress.map(|p| p.1),
    })))
}

fn event_stream(job: Arc<crate::jobs::Job>) -> impl Stream<Item = Result<Event, Infallible>> {
    let rx = job.subscribe();
    stream::unfold((job, rx, 0usize, false), |(job, mut rx, next, finished)| async move {
        if finished {
            return None;
        }
        loop {
            let batch = job.events_from(next);
            if !batch.is_empty() {
                let next = next + batch.len();
                let finished = batch.iter().any(|e| matches!(e, JobEvent::Status { .. }));
                let events: Vec<Result<Event, Infallible>> = batch
                    .iter()
                    .map(|e| {
                        let name = match e {
                            JobEvent::Progress { .. } => "progress",
                            JobEvent::Status { .. } => "status",
                        };
                        Ok(Event::default().event(name).json_data(e).expect("events serialize"))
                    })
                    .collect();
                return Some((stream::iter(events), (job, rx, next, finished)));
            }
            if rx.changed().await.is_err() {
                return None;
            }
        }
    })
    .flatten()
}

async fn job_events(State(studio): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let job = studio.job(&id).ok_or_else(|| not_found("job"))?;
    Ok(Sse::new(event_stream(job)).keep_alive(KeepAlive::default()))
}

async fn cancel_job(State(studio): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let job = studio.job(&id).ok_or_else(|| not_found("job"))?;
    let status = job.status();
    if status.is_terminal() {
        return Ok((StatusCode::OK, Json(json!({ "status": status }))).into_response());
    }
    job.cancel();
    Ok((StatusCode::ACCEPTED, Json(json!({ "status": "cancelling" }))).into_response())
}

async fn job_preview(State(studio): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let job = studio.job(&id).ok_or_else(|| not_found("job"))?;
    job.preview().map(png).ok_or_else(|| not_found("preview"))
}

async fn carve(State(studio): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let sess = session(&studio, &id)?;
    let (field, sketches) = {
        let s = sess.lock().unwrap();
        if s.running() {
            return Err(conflict("cannot carve while a job is running"));
        }
        if s.sketches.views().is_empty() {
            return Err(bad_request("carving needs at least one sketch"));
        }
        (s.current_field(), s.sketches.clone())
    };
    let (carved_field, n) = blocking(move || {
        let mut f = (*field).clone();
        let n = f.carve(&sketches);
        n.map(|n| (f, n))
    })
    .await?
    .map_err(bad_request)?;
    let mut s = sess.lock().unwrap();
    s.current = Some(Arc::new(carved_field));
    studio.persist(&s);
    Ok(Json(json!({ "carved": n })))
}

async fn eval(State(studio): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let (base, current, sketches) = {
        let s = session(&studio, &id)?;
        let s = s.lock().unwrap();
        if s.sketches.views().is_empty() {
            return Err(bad_request("evaluation needs at least one sketch"));
        }
        (s.base.clone(), s.current_field(), s.sketches.clone())
    };
    let report = blocking(move || evaluate(&base, &current, &sketches, &RenderOptions::for_field(&base))).await?;
    Ok(Json(serde_json::to_value(report).map_err(internal)?))
}

#[derive(Deserialize)]
struct FieldQuery {
    #[serde(default)]
    field: Option<String>,
}

async fn download_field(State(studio): State<AppState>, Path(id): Path<String>, Query(q): Query<FieldQuery>) -> ApiResult<Response> {
    let field = {
        let s = session(&studio, &id)?;
        let s = s.lock().unwrap();
        pick_field(&s, q.field.as_deref())?
    };
    let bytes = blocking(move || field.to_bytes()).await?;
    Ok((
        [(header::CONTENT_TYPE, "application/octet-stream"), (header::CONTENT_DISPOSITION, "attachment; filename=\"field.skfd\"")],
        bytes,
    )
        .into_response())
}

async fn use_as_base(State(studio): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let sess = session(&studio, &id)?;
    let mut s = sess.lock().unwrap();
    if s.running() {
        return Err(conflict("a job is running"));
    }
    let current = s.current.take().ok_or_else(|| bad_request("nothing to promote: no finished edit or carve"))?;
    s.base = current;
    s.sketches = sketchedit_core::SketchSet::empty();
    studio.persist(&s);
    Ok(Json(describe(&s)))
}
