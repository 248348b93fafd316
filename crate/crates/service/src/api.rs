use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::multipart::MultipartError;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use image::{DynamicImage, GrayImage, Luma};
use serde_json::json;

use cxr::imaging::{decode_gray, encode_png};
use cxr::localization::render_overlay;
use cxr::pipeline::{InterpretCache, InterpretationResult, PipelineConfig};

use crate::engine::{cache_from_json, scores_json, Engine};
use crate::store::{Completed, HeatmapPngs, Session, Status, Store, WriteError};
use crate::ServiceConfig;

/// Multipart framing on top of the image itself.
const MULTIPART_SLACK: usize = 64 << 10;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    engine: Arc<dyn Engine>,
    store: Store,
    config: ServiceConfig,
    /// Per-study localization and decoding already done, so a threshold
    /// change only works on newly present diseases.
    caches: Mutex<HashMap<String, InterpretCache>>,
}

impl AppState {
    pub fn new(engine: Arc<dyn Engine>, store: Store, config: ServiceConfig) -> Self {
        AppState {
            inner: Arc::new(Inner {
                engine,
                store,
                config,
                caches: Mutex::new(HashMap::new()),
            }),
        }
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    fn caches(&self) -> std::sync::MutexGuard<'_, HashMap<String, InterpretCache>> {
        self.inner.caches.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.inner.config.max_upload_bytes + MULTIPART_SLACK;
    Router::new()
        .route("/healthz", get(healthz))
        .route("/studies", post(create_study))
        .route("/studies/{id}", get(get_session))
        .route("/studies/{id}/interpretation", get(get_interpretation))
        .route("/studies/{id}/report", put(edit_report))
        .route("/studies/{id}/finalize", post(finalize))
        .route("/studies/{id}/heatmap/{file}", get(get_heatmap))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        ApiError(status, msg.into())
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown study `{id}`"))
    }

    fn internal(msg: impl std::fmt::Display) -> Self {
        log::error!("{msg}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, msg.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<rusqlite::Error> for ApiError {
    fn from(e: rusqlite::Error) -> Self {
        ApiError::internal(format!("storage: {e}"))
    }
}

impl From<WriteError> for ApiError {
    fn from(e: WriteError) -> Self {
        match e {
            WriteError::NotFound => ApiError::new(StatusCode::NOT_FOUND, "unknown study"),
            WriteError::NotDraft(Status::Finalized) => ApiError::new(StatusCode::CONFLICT, "study is finalized"),
            WriteError::NotDraft(s) => {
                ApiError::new(StatusCode::CONFLICT, format!("study has no draft to change (status {s:?})"))
            }
            e @ WriteError::Stale { .. } => ApiError::new(StatusCode::PRECONDITION_FAILED, e.to_string()),
            WriteError::Db(e) => e.into(),
        }
    }
}

fn multipart_error(e: MultipartError) -> ApiError {
    ApiError::new(e.status(), e.body_text())
}

async fn healthz(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "diseases": state.inner.engine.diseases() }))
}

fn session_response(status: StatusCode, s: Session) -> Response {
    let etag = format!("\"{}\"", s.version);
    (status, [(header::ETAG, etag)], Json(s)).into_response()
}

fn raw_json(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

/// Links each finding to its heatmap URLs and renders the PNGs behind them.
fn attach_heatmaps(id: &str, image: &GrayImage, result: &mut InterpretationResult) -> cxr::Result<Vec<HeatmapPngs>> {
    let (w, h) = image.dimensions();
    let mut out = Vec::new();
    for f in &mut result.findings {
        let url = format!("/studies/{id}/heatmap/{}.png", f.disease);
        f.artifacts.insert("heatmap".into(), format!("{url}?raw=true"));
        f.artifacts.insert("overlay".into(), url);
        let Some(v) = &f.visuals else { continue };
        let overlay = encode_png(&DynamicImage::ImageRgb8(render_overlay(image, &v.heatmap, Some(&f.bbox))))?;
        let grid = v.heatmap.upsample(h as usize, w as usize).normalized().grid;
        let raw = GrayImage::from_fn(w, h, |x, y| Luma([(grid[[y as usize, x as usize]] * 255.0).round() as u8]));
        out.push(HeatmapPngs {
            disease: f.disease.clone(),
            overlay,
            raw: encode_png(&DynamicImage::ImageLuma8(raw))?,
        });
    }
    Ok(out)
}

fn threshold_key(tau: f64) -> String {
    tau.to_string()
}

/// First interpretation of a freshly stored study at the default τ.
async fn process(state: AppState, id: String, image: GrayImage) -> Result<(), ApiError> {
    let st = state.clone();
    let sid = id.clone();
    let outcome = tokio::task::spawn_blocking(move || -> Result<(), String> {
        let inner = &st.inner;
        let mut cache = InterpretCache::default();
        let mut result = inner
            .engine
            .interpret(&image, &inner.config.pipeline, &mut cache)
            .map_err(|e| e.to_string())?;
        let pngs = attach_heatmaps(&sid, &image, &mut result).map_err(|e| e.to_string())?;
        let text = serde_json::to_string(&result).map_err(|e| e.to_string())?;
        let scores = scores_json(&cache).map_err(|e| e.to_string())?;
        inner
            .store
            .complete(
                &sid,
                &Completed {
                    scores: &scores,
                    threshold: &threshold_key(inner.config.pipeline.threshold),
                    result: &text,
                    heatmaps: &pngs,
                    draft: &result.report.text(),
                },
            )
            .map_err(|e| format!("storage: {e}"))?;
        st.caches().insert(sid, cache);
        Ok(())
    })
    .await
    .unwrap_or_else(|e| Err(format!("interpretation task failed: {e}")));
    if let Err(msg) = outcome {
        log::error!("study {id}: {msg}");
        state.store().fail(&id, &msg)?;
        return Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            format!("interpretation failed: {msg}"),
        ));
    }
    Ok(())
}

async fn create_study(State(state): State<AppState>, mut form: Multipart) -> Result<Response, ApiError> {
    let mut bytes = None;
    while let Some(field) = form.next_field().await.map_err(multipart_error)? {
        if field.name() == Some("image") {
            bytes = Some(field.bytes().await.map_err(multipart_error)?);
        }
    }
    let bytes = bytes.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "multipart field `image` is missing"))?;
    let limit = state.inner.config.max_upload_bytes;
    if bytes.len() > limit {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("image is {} bytes, limit is {limit}", bytes.len()),
        ));
    }
    let image = decode_gray(&bytes)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("cannot decode image: {e}")))?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    state.store().insert_study(&id, &bytes)?;
    if state.inner.config.queue {
        let (st, sid) = (state.clone(), id.clone());
        tokio::spawn(async move {
            // failures are recorded on the study
            let _ = process(st, sid, image).await;
        });
        return Ok((StatusCode::ACCEPTED, Json(json!({ "study_id": id, "status": Status::Queued }))).into_response());
    }
    process(state, id.clone(), image).await?;
    Ok((StatusCode::CREATED, Json(json!({ "study_id": id, "status": Status::Draft }))).into_response())
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = state.store().session(&id)?.ok_or_else(|| ApiError::not_found(&id))?;
    Ok(session_response(StatusCode::OK, s))
}

fn parse_threshold(raw: &str) -> Result<f64, ApiError> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|t| *t > 0.0 && *t < 1.0)
        .ok_or_else(|| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("threshold must be a number in (0, 1), got `{raw}`"),
            )
        })
}

async fn get_interpretation(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let tau = match query.get("threshold") {
        Some(raw) => parse_threshold(raw)?,
        None => state.inner.config.pipeline.threshold,
    };
    match state.store().status(&id)?.ok_or_else(|| ApiError::not_found(&id))? {
        Status::Queued => {
            return Ok((StatusCode::ACCEPTED, Json(json!({ "study_id": id, "status": Status::Queued }))).into_response())
        }
        Status::Failed => {
            let msg = state.store().error(&id)?.unwrap_or_default();
            return Err(ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                format!("interpretation failed: {msg}"),
            ));
        }
        Status::Draft | Status::Finalized => {}
    }
    let key = threshold_key(tau);
    if let Some(text) = state.store().interpretation(&id, &key)? {
        return Ok(raw_json(text));
    }
    let bytes = state.store().image(&id)?.ok_or_else(|| ApiError::not_found(&id))?;
    let scores = state.store().scores(&id)?;
    let cached = state.caches().remove(&id);
    let st = state.clone();
    let text = tokio::task::spawn_blocking(move || -> Result<String, ApiError> {
        let mut cache = match (cached, scores) {
            (Some(c), _) => c,
            (None, Some(s)) => cache_from_json(&s).map_err(|e| ApiError::internal(format!("stored scores: {e}")))?,
            (None, None) => InterpretCache::default(),
        };
        let image = decode_gray(&bytes).map_err(ApiError::internal)?;
        let config = PipelineConfig {
            threshold: tau,
            ..st.inner.config.pipeline.clone()
        };
        let mut result = st
            .inner
            .engine
            .interpret(&image, &config, &mut cache)
            .map_err(|e| ApiError::internal(format!("interpretation failed: {e}")))?;
        let pngs = attach_heatmaps(&id, &image, &mut result).map_err(ApiError::internal)?;
        let text = serde_json::to_string(&result).map_err(ApiError::internal)?;
        let stored = st.store().put_interpretation(&id, &key, &text, &pngs)?;
        st.caches().insert(id, cache);
        Ok(stored)
    })
    .await
    .map_err(ApiError::internal)??;
    Ok(raw_json(text))
}

enum Precondition {
    Missing,
    Any,
    Version(u64),
}

fn if_match(headers: &HeaderMap) -> Result<Precondition, ApiError> {
    let Some(v) = headers.get(header::IF_MATCH) else {
        return Ok(Precondition::Missing);
    };
    let bad = || ApiError::new(StatusCode::BAD_REQUEST, "If-Match must carry the session version, e.g. \"3\"");
    let v = v.to_str().map_err(|_| bad())?.trim();
    if v == "*" {
        return Ok(Precondition::Any);
    }
    let v = v.strip_prefix("W/").unwrap_or(v).trim_matches('"');
    v.parse().map(Precondition::Version).map_err(|_| bad())
}

async fn edit_report(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: String,
) -> Result<Response, ApiError> {
    let precondition = if_match(&headers)?;
    let current = state.store().session(&id)?.ok_or_else(|| ApiError::not_found(&id))?;
    if current.status != Status::Draft {
        return Err(WriteError::NotDraft(current.status).into());
    }
    let text = body.trim();
    if text.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "report text is empty"));
    }
    let expected = match precondition {
        Precondition::Missing => {
            return Err(ApiError::new(
                StatusCode::PRECONDITION_REQUIRED,
                format!("send If-Match: \"{}\" with the session version you edited", current.version),
            ))
        }
        Precondition::Any => current.version,
        Precondition::Version(v) => v,
    };
    Ok(session_response(StatusCode::OK, state.store().edit(&id, text, expected)?))
}

async fn finalize(State(state): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> Result<Response, ApiError> {
    let expected = match if_match(&headers)? {
        Precondition::Version(v) => Some(v),
        Precondition::Missing | Precondition::Any => None,
    };
    Ok(session_response(StatusCode::OK, state.store().finalize(&id, expected)?))
}

async fn get_heatmap(
    State(state): State<AppState>,
    Path((id, file)): Path<(String, String)>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let disease = file.strip_suffix(".png").unwrap_or(&file);
    let raw = query.get("raw").is_some_and(|v| v == "true" || v == "1");
    if state.store().status(&id)?.is_none() {
        return Err(ApiError::not_found(&id));
    }
    let png = state.store().heatmap(&id, disease, raw)?.ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            format!("no heatmap for `{disease}`; request an interpretation where it is present first"),
        )
    })?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}
