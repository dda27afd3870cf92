//! REST service behind the review UI.
//!
//! Pages through the synthetic manifest, serves each synthetic raster with
//! its target and source originals, and appends verdicts to the log kept
//! next to the manifest. Statuses are replayed from that log on startup.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use synthcap_core::dataset::ImageId;
use synthcap_core::jsonl;
use synthcap_core::review::{Verdict, VerdictLog, VERDICT_LOG_FILE};
use synthcap_core::synth::{Provenance, ReviewStatus, SyntheticPairRecord};

pub const DEFAULT_LIMIT: usize = 50;
pub const MAX_LIMIT: usize = 500;
const MAX_REVIEWER_LEN: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error(transparent)]
    Core(#[from] synthcap_core::Error),
    #[error("synth id {0} appears twice in the manifest")]
    DuplicateId(String),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Serve(std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ReviewConfig {
    /// Synthetic manifest (JSONL); the verdict log lives beside it.
    pub manifest: PathBuf,
    /// Directory the dataset image paths in provenance are relative to.
    pub image_root: PathBuf,
    /// Built review UI, served at `/` when present.
    pub ui_dir: Option<PathBuf>,
}

pub struct ReviewState {
    records: Vec<SyntheticPairRecord>,
    index: HashMap<String, usize>,
    manifest_dir: PathBuf,
    image_root: PathBuf,
    log: Mutex<VerdictLog>,
}

impl ReviewState {
    pub fn open(cfg: &ReviewConfig) -> Result<Self, ReviewError> {
        let mut records: Vec<SyntheticPairRecord> = jsonl::read(&cfg.manifest)?;
        records.sort_by(|a, b| a.synth_id.cmp(&b.synth_id));
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.synth_id.clone(), i).is_some() {
                return Err(ReviewError::DuplicateId(r.synth_id.clone()));
            }
        }
        let manifest_dir = cfg
            .manifest
            .parent()
            .map(Path::to_owned)
            .unwrap_or_default();
        let log = VerdictLog::open(&manifest_dir.join(VERDICT_LOG_FILE))?;
        let unknown = log
            .statuses()
            .keys()
            .filter(|id| !index.contains_key(*id))
            .count();
        if unknown > 0 {
            log::warn!("verdict log names {unknown} ids missing from the manifest");
        }
        log::info!(
            "loaded {} synthetic pairs, {} verdicts",
            records.len(),
            log.entries().len()
        );
        Ok(ReviewState {
            records,
            index,
            manifest_dir,
            image_root: cfg.image_root.clone(),
            log: Mutex::new(log),
        })
    }

    fn status_of(&self, record: &SyntheticPairRecord, log: &VerdictLog) -> ReviewStatus {
        log.statuses()
            .get(&record.synth_id)
            .copied()
            .unwrap_or(record.verdict)
    }

    /// Effective status of every record.
    pub fn statuses(&self) -> BTreeMap<String, ReviewStatus> {
        let log = self.log.lock().expect("verdict log lock");
        self.records
            .iter()
            .map(|r| (r.synth_id.clone(), self.status_of(r, &log)))
            .collect()
    }
}

pub fn router(state: Arc<ReviewState>, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/pairs", get(list_pairs))
        .route("/api/pairs/{synth_id}/verdict", post(post_verdict))
        .route("/api/images/{synth_id}", get(get_image))
        .route("/api/{*rest}", get(api_not_found).post(api_not_found))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, cfg: &ReviewConfig) -> Result<(), ReviewError> {
    let state = Arc::new(ReviewState::open(cfg)?);
    let app = router(state, cfg.ui_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ReviewError::Bind { addr, source })?;
    log::info!("review service on http://{}", listener.local_addr().map_err(ReviewError::Serve)?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ReviewError::Serve)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn api_not_found() -> Response {
    error(StatusCode::NOT_FOUND, "no such endpoint")
}

#[derive(Debug, Serialize)]
struct PairView<'a> {
    synth_id: &'a str,
    status: ReviewStatus,
    caption: String,
    tokens: &'a [String],
    novel_class: &'a str,
    candidate_class: &'a str,
    context_tags: &'a [String],
    provenance: &'a Provenance,
    image_url: String,
    target_url: String,
    source_urls: Vec<String>,
}

impl<'a> PairView<'a> {
    fn new(r: &'a SyntheticPairRecord, status: ReviewStatus) -> Self {
        let base = format!("/api/images/{}", r.synth_id);
        PairView {
            synth_id: &r.synth_id,
            status,
            caption: r.caption.tokens.join(" "),
            tokens: &r.caption.tokens,
            novel_class: &r.provenance.novel_class,
            candidate_class: &r.provenance.candidate_class,
            context_tags: &r.context_tags,
            provenance: &r.provenance,
            image_url: base.clone(),
            target_url: format!("{base}?variant=target"),
            source_urls: r
                .provenance
                .source_files
                .keys()
                .map(|id| format!("{base}?variant=source&source={id}"))
                .collect(),
        }
    }
}

struct PageQuery {
    status: Option<ReviewStatus>,
    limit: usize,
    cursor: Option<String>,
}

fn parse_page_query(params: &HashMap<String, String>) -> Result<PageQuery, String> {
    let mut q = PageQuery {
        status: None,
        limit: DEFAULT_LIMIT,
        cursor: None,
    };
    for (key, value) in params {
        match key.as_str() {
            "status" => {
                q.status = match value.as_str() {
                    "all" => None,
                    s => Some(s.parse().map_err(|_| format!("unknown status {s:?}"))?),
                }
            }
            "limit" => {
                q.limit = value
                    .parse()
                    .ok()
                    .filter(|n| (1..=MAX_LIMIT).contains(n))
                    .ok_or_else(|| format!("limit must be an integer in 1..={MAX_LIMIT}"))?;
            }
            "cursor" => {
                if value.is_empty() {
                    return Err("cursor must not be empty".into());
                }
                q.cursor = Some(value.clone());
            }
            other => return Err(format!("unknown parameter {other:?}")),
        }
    }
    Ok(q)
}

async fn list_pairs(
    State(state): State<Arc<ReviewState>>,
    params: Result<Query<HashMap<String, String>>, axum::extract::rejection::QueryRejection>,
) -> Response {
    let Ok(Query(params)) = params else {
        return error(StatusCode::BAD_REQUEST, "malformed query string");
    };
    let q = match parse_page_query(&params) {
        Ok(q) => q,
        Err(msg) => return error(StatusCode::BAD_REQUEST, msg),
    };
    let log = state.log.lock().expect("verdict log lock");
    let matching: Vec<(&SyntheticPairRecord, ReviewStatus)> = state
        .records
        .iter()
        .map(|r| (r, state.status_of(r, &log)))
        .filter(|(_, s)| q.status.is_none_or(|want| *s == want))
        .collect();
    drop(log);
    let start = match &q.cursor {
        Some(c) => matching.partition_point(|(r, _)| r.synth_id.as_str() <= c.as_str()),
        None => 0,
    };
    let page = &matching[start..(start + q.limit).min(matching.len())];
    let next_cursor = (start + page.len() < matching.len())
        .then(|| page.last().map(|(r, _)| r.synth_id.clone()))
        .flatten();
    let items: Vec<PairView> = page.iter().map(|(r, s)| PairView::new(r, *s)).collect();
    Json(json!({
        "items": items,
        "next_cursor": next_cursor,
        "total": matching.len(),
    }))
    .into_response()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictBody {
    decision: ReviewStatus,
    reviewer: String,
    /// Status the client believes the pair has; a mismatch is reported
    /// as a conflict after the verdict is recorded.
    #[serde(default)]
    expected: Option<ReviewStatus>,
}

async fn post_verdict(
    State(state): State<Arc<ReviewState>>,
    UrlPath(synth_id): UrlPath<String>,
    body: Bytes,
) -> Response {
    let body: VerdictBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid verdict body: {e}")),
    };
    let reviewer = body.reviewer.trim().to_owned();
    if reviewer.is_empty() || reviewer.len() > MAX_REVIEWER_LEN {
        return error(
            StatusCode::BAD_REQUEST,
            format!("reviewer must be 1..={MAX_REVIEWER_LEN} characters"),
        );
    }
    let Some(&i) = state.index.get(&synth_id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown synth id {synth_id}"));
    };
    let task_state = Arc::clone(&state);
    let outcome = tokio::task::spawn_blocking(move || {
        let state = task_state;
        let mut log = state.log.lock().expect("verdict log lock");
        let previous = state.status_of(&state.records[i], &log);
        log.append(Verdict {
            synth_id,
            decision: body.decision,
            reviewer,
            timestamp: Utc::now(),
        })
        .map(|()| (previous, body.expected))
    })
    .await;
    match outcome {
        Ok(Ok((previous, Some(expected)))) if expected != previous => (
            StatusCode::CONFLICT,
            Json(json!({
                "error": "pair status changed since it was read",
                "expected": expected,
                "previous": previous,
                "status": body.decision,
            })),
        )
            .into_response(),
        Ok(Ok(_)) => StatusCode::NO_CONTENT.into_response(),
        Ok(Err(e)) => {
            log::error!("{e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, "could not record verdict")
        }
        Err(e) => {
            log::error!("verdict task failed: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, "could not record verdict")
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageQuery {
    #[serde(default)]
    variant: Variant,
    source: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Variant {
    #[default]
    Synthetic,
    Target,
    Source,
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    }
}

async fn get_image(
    State(state): State<Arc<ReviewState>>,
    UrlPath(synth_id): UrlPath<String>,
    query: Result<Query<ImageQuery>, axum::extract::rejection::QueryRejection>,
    headers: HeaderMap,
) -> Response {
    let Ok(Query(query)) = query else {
        return error(StatusCode::BAD_REQUEST, "variant must be synthetic, target or source");
    };
    let Some(&i) = state.index.get(&synth_id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown synth id {synth_id}"));
    };
    let record = &state.records[i];
    let (path, tag) = match query.variant {
        Variant::Synthetic => (state.manifest_dir.join(&record.image_path), "synthetic".to_owned()),
        Variant::Target => (
            state.image_root.join(&record.provenance.target_file),
            "target".to_owned(),
        ),
        Variant::Source => {
            let sources = &record.provenance.source_files;
            let picked = match query.source {
                Some(id) => sources.get_key_value(&ImageId(id)),
                None => sources.iter().next(),
            };
            let Some((id, file)) = picked else {
                return error(StatusCode::NOT_FOUND, "no such source image for this pair");
            };
            (state.image_root.join(file), format!("source-{id}"))
        }
    };
    let etag = format!("\"{synth_id}-{tag}\"");
    if headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|t| t.trim() == etag || t.trim() == "*"))
    {
        return (StatusCode::NOT_MODIFIED, [(header::ETAG, etag)]).into_response();
    }
    let bytes = match tokio::fs::read(&path).await {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return error(StatusCode::NOT_FOUND, format!("image file for {synth_id} is missing"));
        }
        Err(e) => {
            log::error!("{}: {e}", path.display());
            return error(StatusCode::INTERNAL_SERVER_ERROR, "could not read image");
        }
    };
    let mut resp = Response::new(Body::from(bytes));
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static(content_type(&path)));
    h.insert(
        header::CACHE_CONTROL,
        HeaderValue::from_static("public, max-age=31536000, immutable"),
    );
    if let Ok(v) = HeaderValue::from_str(&etag) {
        h.insert(header::ETAG, v);
    }
    resp
}
