//! HTTP interface over a data directory.
//!
//! Readers take a cheap clone of the current [`State`] and never block on
//! writers; ingest and index builds produce a new state and swap it in.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::{Body, Bytes};
use axum::extract::{Query, State as Extract};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use pvss_core::camera_graph::{CameraNode, ViewEdge};
use pvss_core::evaluator::EvalReport;
use pvss_core::searcher::QueryTriplet;
use pvss_core::track_store::{TrackMetadata, TrackRef};

use crate::config::ServiceConfig;
use crate::error::{AppError, AppResult, ErrorKind};
use crate::workspace::{
    build_index, evaluate, ingest_tracks, persist, run_search, write_report, DataDir, IndexSummary,
    IngestSummary, SearchRequest, State, StreamFormat, StreamRecord,
};

pub struct Service {
    dir: DataDir,
    config: ServiceConfig,
    state: RwLock<State>,
    /// Bumped on every state change; keys the report cache.
    generation: AtomicU64,
    rebuilding: AtomicBool,
    /// Serializes writers.
    writer: tokio::sync::Mutex<()>,
    report: Mutex<Option<(u64, Arc<EvalReport>)>>,
}

impl Service {
    pub fn open(config: ServiceConfig) -> AppResult<Self> {
        let dir = DataDir::new(&config.data_dir);
        let state = State::load(&dir, &config)?;
        Ok(Self::new(dir, config, state))
    }

    pub fn new(dir: DataDir, config: ServiceConfig, state: State) -> Self {
        Self {
            dir,
            config,
            state: RwLock::new(state),
            generation: AtomicU64::new(0),
            rebuilding: AtomicBool::new(false),
            writer: tokio::sync::Mutex::new(()),
            report: Mutex::new(None),
        }
    }

    pub fn snapshot(&self) -> State {
        self.state.read().expect("state lock").clone()
    }

    fn swap(&self, next: State) {
        *self.state.write().expect("state lock") = next;
        self.generation.fetch_add(1, Ordering::SeqCst);
    }

    /// 503 while a rebuild will soon provide the missing index, else 409.
    fn require_index(&self, state: &State) -> AppResult<()> {
        if state.index.is_some() {
            Ok(())
        } else if self.rebuilding.load(Ordering::SeqCst) {
            Err(AppError::new(ErrorKind::Unavailable, "index rebuild in progress"))
        } else {
            Err(AppError::conflict("index not built; POST /index/build"))
        }
    }
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/ingest", post(ingest))
        .route("/index/build", post(index_build))
        .route("/search", post(search))
        .route("/pivot", post(pivot))
        .route("/cameras", get(cameras))
        .route("/graph", get(graph))
        .route("/eval/report", get(eval_report))
        .with_state(service)
}

pub async fn serve(config: ServiceConfig) -> AppResult<()> {
    let listen = config.listen.clone();
    let service = Arc::new(Service::open(config)?);
    let listener = tokio::net::TcpListener::bind(&listen).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).await?;
    Ok(())
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> AppResult<T> {
    serde_json::from_slice(body).map_err(|e| AppError::new(ErrorKind::Invalid, format!("request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> AppResult<T> + Send + 'static) -> AppResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| AppError::new(ErrorKind::Internal, e.to_string()))?
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestBody {
    tracks: Vec<TrackMetadata>,
}

async fn ingest(Extract(svc): Extract<Arc<Service>>, body: Bytes) -> AppResult<Json<IngestSummary>> {
    let IngestBody { tracks } = parse_body(&body)?;
    let _guard = svc.writer.lock().await;
    let current = svc.snapshot();
    let dir = svc.dir.clone();
    let (next, summary) = blocking(move || {
        let (next, summary) = ingest_tracks(&current, tracks)?;
        persist(&dir, &next)?;
        Ok((next, summary))
    })
    .await?;
    svc.swap(next);
    Ok(Json(summary))
}

async fn index_build(Extract(svc): Extract<Arc<Service>>) -> AppResult<Json<IndexSummary>> {
    if svc.rebuilding.swap(true, Ordering::SeqCst) {
        return Err(AppError::new(ErrorKind::Unavailable, "index rebuild already in progress"));
    }
    let result = async {
        let _guard = svc.writer.lock().await;
        let current = svc.snapshot();
        let (dir, config) = (svc.dir.clone(), svc.config.clone());
        let store = current.store.clone();
        let (index, summary) = blocking(move || {
            let (index, summary) = build_index(&store, &config)?;
            index.save(dir.index())?;
            Ok((index, summary))
        })
        .await?;
        svc.swap(State {
            index: Some(Arc::new(index)),
            ..current
        });
        Ok(Json(summary))
    }
    .await;
    svc.rebuilding.store(false, Ordering::SeqCst);
    result
}

#[derive(Debug, Default, Deserialize)]
struct FormatParam {
    #[serde(default)]
    format: StreamFormat,
}

async fn search(
    Extract(svc): Extract<Arc<Service>>,
    Query(fmt): Query<FormatParam>,
    body: Bytes,
) -> Response {
    match parse_body::<SearchRequest>(&body) {
        Ok(req) => stream_search(svc, req, fmt.format).await,
        Err(e) => e.into_response(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PivotBody {
    track: TrackRef,
    window_s: f64,
    max_hops: usize,
}

/// Follow-on triplet anchored at a result; POST it to /search as is.
async fn pivot(Extract(svc): Extract<Arc<Service>>, body: Bytes) -> AppResult<Json<QueryTriplet>> {
    let p: PivotBody = parse_body(&body)?;
    if !p.window_s.is_finite() {
        return Err(AppError::new(ErrorKind::Invalid, "window_s must be finite"));
    }
    let state = svc.snapshot();
    Ok(Json(pvss_core::searcher::pivot(&state.store, p.track, p.window_s, p.max_hops)?))
}

/// Streams snapshots as they are produced. Failures before the first record
/// become a plain error response; later ones end the stream with an error
/// record.
async fn stream_search(svc: Arc<Service>, req: SearchRequest, format: StreamFormat) -> Response {
    let state = svc.snapshot();
    if let Err(e) = svc.require_index(&state) {
        return e.into_response();
    }
    let config = svc.config.clone();
    let (tx, mut rx) = mpsc::channel::<StreamRecord>(16);
    tokio::task::spawn_blocking(move || {
        let sender = tx.clone();
        if let Err(e) = run_search(&state, &req, &config, |r| {
            let _ = sender.blocking_send(r);
        }) {
            let _ = tx.blocking_send(StreamRecord::Error { error: e });
        }
    });
    let first = match rx.recv().await {
        Some(StreamRecord::Error { error }) => return error.into_response(),
        Some(r) => r,
        None => return AppError::new(ErrorKind::Internal, "search ended without output").into_response(),
    };
    let stream = futures_util::stream::unfold((Some(first), rx), move |(pending, mut rx)| async move {
        let next = match pending {
            Some(r) => r,
            None => rx.recv().await?,
        };
        Some((Ok::<_, std::convert::Infallible>(next.line(format)), (None, rx)))
    });
    let content_type = match format {
        StreamFormat::Json => "application/x-ndjson",
        StreamFormat::Text => "text/plain; charset=utf-8",
    };
    (StatusCode::OK, [(header::CONTENT_TYPE, content_type)], Body::from_stream(stream)).into_response()
}

#[derive(Debug, Serialize)]
struct CameraInfo<'a> {
    #[serde(flatten)]
    node: &'a CameraNode,
    tracks: usize,
}

async fn cameras(Extract(svc): Extract<Arc<Service>>) -> Response {
    let state = svc.snapshot();
    let list: Vec<CameraInfo> = state
        .graph
        .nodes()
        .map(|node| CameraInfo {
            node,
            tracks: state.store.table(node.camera_id).map_or(0, |t| t.len()),
        })
        .collect();
    Json(list).into_response()
}

#[derive(Debug, Serialize)]
struct GraphView<'a> {
    slot_length_s: f64,
    default_speed_mps: f64,
    nodes: Vec<&'a CameraNode>,
    edges: Vec<&'a ViewEdge>,
}

async fn graph(Extract(svc): Extract<Arc<Service>>) -> Response {
    let state = svc.snapshot();
    Json(GraphView {
        slot_length_s: state.graph.slot_length_s(),
        default_speed_mps: state.graph.default_speed_mps(),
        nodes: state.graph.nodes().collect(),
        edges: state.graph.edges().collect(),
    })
    .into_response()
}

#[derive(Debug, Default, Deserialize)]
struct ReportParam {
    #[serde(default)]
    format: ReportFormat,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ReportFormat {
    #[default]
    Json,
    Text,
}

async fn eval_report(Extract(svc): Extract<Arc<Service>>, Query(p): Query<ReportParam>) -> AppResult<Response> {
    let generation = svc.generation.load(Ordering::SeqCst);
    let cached = svc
        .report
        .lock()
        .expect("report lock")
        .as_ref()
        .filter(|(g, _)| *g == generation)
        .map(|(_, r)| r.clone());
    let report = match cached {
        Some(r) => r,
        None => {
            let state = svc.snapshot();
            let (dir, config) = (svc.dir.clone(), svc.config.clone());
            let report = Arc::new(
                blocking(move || {
                    let report = evaluate(&dir, &state, &config)?;
                    write_report(&dir, &report)?;
                    Ok(report)
                })
                .await?,
            );
            *svc.report.lock().expect("report lock") = Some((generation, report.clone()));
            report
        }
    };
    Ok(match p.format {
        ReportFormat::Json => (
            [(header::CONTENT_TYPE, "application/x-ndjson")],
            report.json_lines(),
        )
            .into_response(),
        ReportFormat::Text => report.table().into_response(),
    })
}
