//! HTTP service for interactive adaptive sessions.
//!
//! Each session lives in `<data_dir>/<id>/` as `config.json` plus an
//! append-only `outcomes.log` (one outcome index per line); sessions are
//! rebuilt on startup by replaying the log. Round updates are pushed to
//! websocket subscribers in submission order.

use crate::config::{parse_json, ScenarioConfig};
use crate::error::{CliError, CliResult};
use crate::tasks::{adapt_artifacts, build_session};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use qmetro::adaptive::{AdaptiveSession, Phase, Round, RoundReport};
use qmetro::models::unravel;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use tokio::sync::{broadcast, Mutex};
use uuid::Uuid;

/// Posterior samples per axis in round payloads.
pub const MAX_POINTS_PER_AXIS: usize = 512;

const CONFIG_FILE: &str = "config.json";
const LOG_FILE: &str = "outcomes.log";

struct Slot {
    session: Mutex<AdaptiveSession>,
    events: broadcast::Sender<String>,
}

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<Uuid, Arc<Slot>>>>,
    data_dir: Arc<PathBuf>,
}

impl AppState {
    /// Opens `data_dir`, restoring every stored session.
    pub fn open(data_dir: PathBuf) -> CliResult<Self> {
        std::fs::create_dir_all(&data_dir).map_err(|e| CliError::io(&data_dir, e))?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&data_dir).map_err(|e| CliError::io(&data_dir, e))? {
            let path = entry.map_err(|e| CliError::io(&data_dir, e))?.path();
            let Some(id) = path.file_name().and_then(|n| n.to_str()).and_then(|n| Uuid::parse_str(n).ok()) else { continue };
            match restore(&path) {
                Ok(s) => {
                    sessions.insert(id, Arc::new(slot(s)));
                }
                Err(e) => eprintln!("skipping session {id}: {e}"),
            }
        }
        Ok(Self { sessions: Arc::new(RwLock::new(sessions)), data_dir: Arc::new(data_dir) })
    }

    fn get(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        let id = Uuid::parse_str(id).map_err(|_| ApiError::not_found())?;
        self.sessions.read().expect("session map lock").get(&id).cloned().ok_or_else(ApiError::not_found)
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session map lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn slot(session: AdaptiveSession) -> Slot {
    let (events, _) = broadcast::channel(1024);
    Slot { session: Mutex::new(session), events }
}

fn restore(dir: &std::path::Path) -> CliResult<AdaptiveSession> {
    let cfg_path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| CliError::io(&cfg_path, e))?;
    let cfg = parse_json(&text)?;
    let (session, _) = build_session(&cfg)?;
    let log_path = dir.join(LOG_FILE);
    let log = match std::fs::read_to_string(&log_path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(CliError::io(&log_path, e)),
    };
    let ys = log
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<usize>().map_err(|_| CliError::Parse(format!("bad outcome `{l}` in {}", log_path.display()))))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(session.replay(&ys)?.0)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, body: json!({ "error": message.into() }) }
    }

    fn not_found() -> Self {
        Self::new(StatusCode::NOT_FOUND, "no such session")
    }

    fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.body[key] = json!(value);
        self
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        use qmetro::Error as E;
        match &e {
            CliError::Invalid { path, .. } => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()).with("path", path),
            CliError::Parse(_) => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
            CliError::Io { .. } => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
            CliError::Library(E::Dimension(_) | E::UnknownTemplate(_)) => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
            CliError::Library(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Posterior on a subsampled grid of at most [`MAX_POINTS_PER_AXIS`] points per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorView {
    pub axes: Vec<Vec<f64>>,
    pub density: Vec<f64>,
}

fn pick(n: usize) -> Vec<usize> {
    if n <= MAX_POINTS_PER_AXIS {
        return (0..n).collect();
    }
    (0..MAX_POINTS_PER_AXIS).map(|i| i * (n - 1) / (MAX_POINTS_PER_AXIS - 1)).collect()
}

pub fn downsample(axes: &[Vec<f64>], p: &[f64]) -> PosteriorView {
    let picks: Vec<Vec<usize>> = axes.iter().map(|a| pick(a.len())).collect();
    let small: Vec<Vec<f64>> = picks.iter().zip(axes).map(|(ix, a)| ix.iter().map(|&i| a[i]).collect()).collect();
    let total: usize = picks.iter().map(Vec::len).product();
    let density = (0..total)
        .map(|k| {
            let sub = unravel(&small, k);
            let flat = sub.iter().zip(&picks).zip(axes).fold(0, |acc, ((&s, ix), a)| acc * a.len() + ix[s]);
            p[flat]
        })
        .collect();
    PosteriorView { axes: small, density }
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::PreEstimation => "pre_estimation",
        Phase::Adaptive => "adaptive",
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub id: String,
    pub round: usize,
    pub phase: String,
    pub pre_rounds: usize,
    pub outcomes: usize,
    pub x_opt: Vec<f64>,
    /// Shift to apply in the next round.
    pub u: Vec<f64>,
    pub x_hat: Option<Vec<f64>>,
    pub posterior: PosteriorView,
}

fn summary(id: &str, s: &AdaptiveSession) -> Summary {
    Summary {
        id: id.to_string(),
        round: s.round(),
        phase: phase_name(s.phase()).into(),
        pre_rounds: s.pre_rounds(),
        outcomes: s.outcomes(),
        x_opt: s.x_opt().to_vec(),
        u: s.u().to_vec(),
        x_hat: s.history().last().map(|r| r.x_hat.clone()),
        posterior: downsample(s.axes(), s.posterior()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FullState {
    #[serde(flatten)]
    pub summary: Summary,
    pub history: Vec<Round>,
    pub axes: Vec<Vec<f64>>,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundPayload {
    pub round: usize,
    pub y: usize,
    pub u_used: Vec<f64>,
    pub u_next: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub phase: String,
    pub posterior: PosteriorView,
}

fn payload(r: RoundReport, s: &AdaptiveSession) -> RoundPayload {
    RoundPayload {
        round: r.round,
        y: r.y,
        u_used: r.u_used,
        u_next: r.u_next,
        x_hat: r.x_hat,
        phase: phase_name(r.phase).into(),
        posterior: downsample(s.axes(), s.posterior()),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeRequest {
    pub y: usize,
    /// Number of completed rounds the client expects; rejects stale submissions.
    pub round: Option<usize>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(full_state))
        .route("/sessions/{id}/outcomes", post(submit))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/export/{file}", get(export_file))
        .with_state(state)
}

async fn create(State(st): State<AppState>, body: String) -> Result<(StatusCode, Json<Summary>), ApiError> {
    let cfg = parse_json(&body)?;
    if cfg.task_name() != "adapt" {
        return Err(CliError::invalid("task.kind", "sessions need an adapt task").into());
    }
    let built = cfg.clone();
    let session = tokio::task::spawn_blocking(move || build_session(&built))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??
        .0;
    let id = Uuid::new_v4();
    persist_new(&st.data_dir.join(id.to_string()), &cfg)?;
    let out = summary(&id.to_string(), &session);
    st.sessions.write().expect("session map lock").insert(id, Arc::new(slot(session)));
    Ok((StatusCode::CREATED, Json(out)))
}

fn persist_new(dir: &std::path::Path, cfg: &ScenarioConfig) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let text = serde_json::to_string_pretty(cfg).expect("configs serialize");
    let path = dir.join(CONFIG_FILE);
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    let log = dir.join(LOG_FILE);
    std::fs::write(&log, "").map_err(|e| CliError::io(&log, e))
}

async fn full_state(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<FullState>, ApiError> {
    let slot = st.get(&id)?;
    let s = slot.session.lock().await;
    Ok(Json(FullState {
        summary: summary(&id, &s),
        history: s.history().to_vec(),
        axes: s.axes().to_vec(),
        density: s.posterior().to_vec(),
    }))
}

async fn submit(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<OutcomeRequest>,
) -> Result<Json<RoundPayload>, ApiError> {
    let slot = st.get(&id)?;
    let mut guard = slot
        .session
        .try_lock()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "another outcome for this session is being processed"))?;
    if let Some(r) = req.round {
        if r != guard.round() {
            return Err(ApiError::new(StatusCode::CONFLICT, format!("round {r} is stale; the session has completed {}", guard.round()))
                .with("round", guard.round()));
        }
    }
    if req.y >= guard.outcomes() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("outcome {} is out of range; the measurement has {} outcomes", req.y, guard.outcomes()),
        )
        .with("outcomes", guard.outcomes()));
    }
    let mut next = guard.clone();
    let report = next.step(req.y).map_err(|e| ApiError::from(CliError::from(e)))?;
    let log = st.data_dir.join(id.as_str()).join(LOG_FILE);
    append_line(&log, req.y).map_err(|e| ApiError::from(CliError::io(&log, e)))?;
    *guard = next;
    let body = payload(report, &guard);
    let _ = slot.events.send(json!({ "type": "round", "data": &body }).to_string());
    Ok(Json(body))
}

fn append_line(path: &std::path::Path, y: usize) -> std::io::Result<()> {
    let mut f = std::fs::OpenOptions::new().append(true).create(true).open(path)?;
    writeln!(f, "{y}")?;
    f.sync_data()
}

async fn events(State(st): State<AppState>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Result<Response, ApiError> {
    let slot = st.get(&id)?;
    Ok(ws.on_upgrade(move |socket| stream_events(socket, id, slot)))
}

async fn stream_events(mut socket: WebSocket, id: String, slot: Arc<Slot>) {
    // Subscribing under the session lock orders the snapshot before every later round.
    let (snapshot, mut rx) = {
        let s = slot.session.lock().await;
        (json!({ "type": "snapshot", "data": summary(&id, &s) }).to_string(), slot.events.subscribe())
    };
    if socket.send(Message::Text(snapshot.into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(text) => {
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                // A lagging subscriber reconnects to get a fresh snapshot.
                Err(_) => {
                    let _ = socket.send(Message::Close(None)).await;
                    return;
                }
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

async fn export_files(st: &AppState, id: &str) -> Result<BTreeMap<String, String>, ApiError> {
    let slot = st.get(id)?;
    let s = slot.session.lock().await;
    Ok(adapt_artifacts(&s, &[]))
}

async fn export(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let files = export_files(&st, &id).await?;
    Ok(Json(json!({ "id": id, "files": files })))
}

async fn export_file(State(st): State<AppState>, Path((id, file)): Path<(String, String)>) -> Result<Response, ApiError> {
    let files = export_files(&st, &id).await?;
    let text = files.get(&file).cloned().ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no export named {file}")))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], text).into_response())
}

/// Serves until interrupted.
pub async fn serve(bind: SocketAddr, data_dir: PathBuf) -> CliResult<()> {
    let state = AppState::open(data_dir)?;
    let listener = tokio::net::TcpListener::bind(bind).await.map_err(|e| CliError::io(bind.to_string(), e))?;
    let addr = listener.local_addr().map_err(|e| CliError::io(bind.to_string(), e))?;
    println!("serving {} sessions on http://{addr}", state.len());
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::io(addr.to_string(), e))
}
