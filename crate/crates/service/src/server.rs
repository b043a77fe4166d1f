//! HTTP routes and the per-session WebSocket loop.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use boneforge::geometry::sample_surface;
use boneforge::optimizer::{retarget_with, OptimConfig, RetargetConfig};
use boneforge::{write_rig, SkinnedSurface};
use futures_util::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::mpsc;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::catalog::Catalog;
use crate::protocol::{encode_mesh, encode_vertices, parse_client, pose_record, ClientMessage, ServerMessage, TransformRecord};
use crate::session::{Session, Snapshot, DEFAULT_MAX_UNDO};

pub const DEFAULT_RETARGET_SAMPLES: usize = 2000;
const MAX_RETARGET_STEPS: usize = 100_000;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub max_undo: usize,
    pub seed: u64,
    /// Origins allowed by CORS; empty allows any.
    pub cors_origins: Vec<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { max_undo: DEFAULT_MAX_UNDO, seed: 0, cors_origins: Vec::new() }
    }
}

pub struct AppState {
    pub catalog: Catalog,
    pub config: ServerConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(catalog: Catalog, config: ServerConfig) -> Arc<AppState> {
        Arc::new(AppState { catalog, config, sessions: RwLock::new(HashMap::new()), next_id: AtomicU64::new(1) })
    }

    pub fn session(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions.read().unwrap().get(id).cloned()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = if state.config.cors_origins.is_empty() {
        CorsLayer::new().allow_origin(Any)
    } else {
        let origins: Vec<HeaderValue> = state.config.cors_origins.iter().filter_map(|o| o.parse().ok()).collect();
        CorsLayer::new().allow_origin(AllowOrigin::list(origins))
    }
    .allow_methods(Any)
    .allow_headers(Any);
    Router::new()
        .route("/rigs", get(list_rigs))
        .route("/sessions", axum::routing::post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/mesh", get(get_mesh))
        .route("/sessions/{id}/pose", axum::routing::put(put_pose))
        .route("/sessions/{id}/rig", get(get_rig))
        .route("/sessions/{id}/ws", get(ws_upgrade))
        .layer(cors)
        .with_state(state)
}

fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (status, Json(json!({"v": 1, "error": {"code": code, "message": message.into()}}))).into_response()
}

fn no_session(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}"))
}

fn lookup(state: &AppState, id: &str) -> Result<Arc<Mutex<Session>>, Response> {
    state.session(id).ok_or_else(|| no_session(id))
}

async fn list_rigs(State(state): State<Arc<AppState>>) -> Response {
    Json(json!({"v": 1, "rigs": state.catalog.summaries()})).into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    rig_id: String,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Result<Json<CreateSession>, JsonRejection>) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_payload", e.body_text()),
    };
    let Some(entry) = state.catalog.get(&body.rig_id) else {
        return error(StatusCode::NOT_FOUND, "unknown_rig", format!("no rig {}", body.rig_id));
    };
    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::Relaxed));
    let seed = state.config.seed;
    let max_undo = state.config.max_undo;
    let built = tokio::task::spawn_blocking(move || Session::new(id, entry, max_undo, seed)).await;
    match built {
        Ok(Ok(session)) => {
            let view = session.state();
            state.sessions.write().unwrap().insert(session.id.clone(), Arc::new(Mutex::new(session)));
            (StatusCode::CREATED, Json(view)).into_response()
        }
        Ok(Err(e)) => error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_rig", e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.sessions.write().unwrap().remove(&id) {
        Some(s) => {
            s.lock().unwrap().cancel_retarget();
            StatusCode::NO_CONTENT.into_response()
        }
        None => no_session(&id),
    }
}

async fn get_state(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match lookup(&state, &id) {
        Ok(s) => Json(s.lock().unwrap().state()).into_response(),
        Err(r) => r,
    }
}

#[derive(Deserialize)]
struct MeshQuery {
    pose: Option<String>,
    format: Option<String>,
}

async fn get_mesh(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<MeshQuery>) -> Response {
    let session = match lookup(&state, &id) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let (snap, triangles) = {
        let s = session.lock().unwrap();
        (s.snapshot(), s.entry.canonical.triangles.clone())
    };
    let canonical = match q.pose.as_deref().unwrap_or("current") {
        "current" => false,
        "canonical" => true,
        other => return error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_pose", format!("unknown pose {other:?}; use current or canonical")),
    };
    let json_out = match q.format.as_deref().unwrap_or("binary") {
        "binary" => false,
        "json" => true,
        other => return error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_format", format!("unknown format {other:?}")),
    };
    let vertices = tokio::task::spawn_blocking(move || {
        if canonical {
            snap.skinned.deform(&snap.rig, &snap.rig.canonical_pose()).expect("canonical pose covers the rig")
        } else {
            snap.mesh()
        }
    })
    .await
    .expect("mesh task");
    if json_out {
        let v: Vec<[f64; 3]> = vertices.iter().map(|p| [p.x, p.y, p.z]).collect();
        Json(json!({"v": 1, "vertices": v, "triangles": triangles})).into_response()
    } else {
        ([(header::CONTENT_TYPE, "application/octet-stream")], encode_mesh(&vertices, &triangles)).into_response()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseBody {
    locals: BTreeMap<u32, TransformRecord>,
}

async fn put_pose(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Result<Json<PoseBody>, JsonRejection>) -> Response {
    let session = match lookup(&state, &id) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let Json(body) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_pose", e.body_text()),
    };
    let mut s = session.lock().unwrap();
    match s.set_pose(&body.locals) {
        Ok(_) => Json(s.state()).into_response(),
        Err(e) if e.code == "busy" => error(StatusCode::CONFLICT, e.code, e.message),
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, e.code, e.message),
    }
}

async fn get_rig(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match lookup(&state, &id) {
        Ok(s) => {
            let snap = s.lock().unwrap().snapshot();
            ([(header::CONTENT_TYPE, "application/json")], write_rig(&snap.rig, &[snap.pose.clone()])).into_response()
        }
        Err(r) => r,
    }
}

#[derive(Deserialize)]
struct WsQuery {
    format: Option<String>,
}

async fn ws_upgrade(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<WsQuery>,
    ws: WebSocketUpgrade,
) -> Response {
    let session = match lookup(&state, &id) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let inline = match q.format.as_deref() {
        None | Some("binary") => false,
        Some("json") => true,
        Some(other) => return error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_format", format!("unknown format {other:?}")),
    };
    ws.on_upgrade(move |socket| session_loop(socket, session, inline))
}

enum Outbound {
    Text(String),
    Binary(Vec<u8>),
}

#[derive(Clone)]
struct Link {
    tx: mpsc::UnboundedSender<Outbound>,
    inline: bool,
}

impl Link {
    fn send(&self, m: &ServerMessage) {
        let _ = self.tx.send(Outbound::Text(m.to_json()));
    }

    fn mesh(&self, revision: u64, snap: &Snapshot) {
        let vertices = snap.mesh();
        if self.inline {
            self.send(&ServerMessage::MeshUpdate {
                revision,
                vertex_count: vertices.len(),
                encoding: "json".into(),
                vertices: Some(vertices.iter().map(|p| [p.x, p.y, p.z]).collect()),
            });
        } else {
            self.send(&ServerMessage::MeshUpdate {
                revision,
                vertex_count: vertices.len(),
                encoding: "binary".into(),
                vertices: None,
            });
            let _ = self.tx.send(Outbound::Binary(encode_vertices(&vertices)));
        }
    }
}

async fn session_loop(socket: WebSocket, session: Arc<Mutex<Session>>, inline: bool) {
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<Outbound>();
    let writer = tokio::spawn(async move {
        while let Some(m) = rx.recv().await {
            let msg = match m {
                Outbound::Text(t) => Message::Text(t.into()),
                Outbound::Binary(b) => Message::Binary(b.into()),
            };
            if sink.send(msg).await.is_err() {
                break;
            }
        }
    });
    let link = Link { tx, inline };
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            Message::Binary(_) => {
                link.send(&ServerMessage::error("bad_message", "binary client frames are not accepted"));
                continue;
            }
            _ => continue,
        };
        match parse_client(&text) {
            Ok(m) => handle(&session, &link, m),
            Err(e) => link.send(&e),
        }
    }
    session.lock().unwrap().cancel_retarget();
    drop(link);
    let _ = writer.await;
}

/// Applies one message; replies are queued before the next message is read.
fn handle(session: &Arc<Mutex<Session>>, link: &Link, msg: ClientMessage) {
    if let ClientMessage::RetargetStart { target_ref, steps, samples } = msg {
        start_retarget(session, link, &target_ref, steps, samples);
        return;
    }
    let mut s = session.lock().unwrap();
    let result = match msg {
        ClientMessage::SetBoneLocal { bone_id, rotation, translation } => {
            s.set_bone_local(bone_id, &TransformRecord { rotation, translation })
        }
        ClientMessage::AddChildren { parent_id, k } => s.add_children(parent_id, k),
        ClientMessage::DeleteSubtree { bone_id } => s.delete_subtree(bone_id),
        ClientMessage::Undo => s.undo(),
        ClientMessage::Redo => s.redo(),
        ClientMessage::RetargetCancel => {
            if !s.cancel_retarget() {
                link.send(&ServerMessage::error("not_running", "no retarget is running"));
            }
            return;
        }
        ClientMessage::RetargetStart { .. } => unreachable!(),
    };
    match result {
        Ok(delta) => {
            link.send(&delta);
            let (rev, snap) = (s.revision(), s.snapshot());
            drop(s);
            link.mesh(rev, &snap);
        }
        Err(e) => link.send(&e.to_message()),
    }
}

fn start_retarget(session: &Arc<Mutex<Session>>, link: &Link, target_ref: &str, steps: usize, samples: Option<usize>) {
    let samples = samples.unwrap_or(DEFAULT_RETARGET_SAMPLES);
    if steps == 0 || steps > MAX_RETARGET_STEPS || samples == 0 {
        link.send(&ServerMessage::error("invalid_request", format!("steps must be in 1..={MAX_RETARGET_STEPS} and samples positive")));
        return;
    }
    let (snap, cancel, entry, seed) = {
        let mut s = session.lock().unwrap();
        if s.entry.target(target_ref).is_none() {
            link.send(&ServerMessage::error("unknown_target", format!("no target {target_ref:?}")));
            return;
        }
        match s.begin_retarget() {
            Ok((snap, cancel)) => (snap, cancel, s.entry.clone(), s.seed()),
            Err(e) => {
                link.send(&e.to_message());
                return;
            }
        }
    };
    let target_ref = target_ref.to_string();
    let session = session.clone();
    let link = link.clone();
    tokio::task::spawn_blocking(move || {
        let target_mesh = entry.target(&target_ref).expect("checked above");
        let run = || -> boneforge::Result<_> {
            let points = sample_surface(&entry.canonical, samples, seed)?.points;
            let skinned = SkinnedSurface::from_points(points, &snap.rig, None)?;
            let target = sample_surface(target_mesh, samples, seed.wrapping_add(1))?;
            let cfg = RetargetConfig {
                optim: OptimConfig { max_steps: steps, seed, ..OptimConfig::default() },
                checkpoints: vec![steps],
                ..RetargetConfig::default()
            };
            retarget_with(&snap.rig, &skinned, &snap.pose, &target, &cfg, |s| {
                link.send(&ServerMessage::RetargetProgress { step: s.step, cd: s.cd, loss: s.loss });
                !cancel.load(Ordering::Relaxed)
            })
        };
        match run() {
            Ok(report) => {
                let done = ServerMessage::RetargetDone {
                    stop: serde_json::to_value(report.stop).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                    steps: report.steps.last().map_or(0, |s| s.step),
                    final_cd: report.final_cd(),
                    pose: pose_record(&report.final_pose),
                };
                let mut s = session.lock().unwrap();
                let delta = s.finish_retarget(Some(report.final_pose));
                let (rev, snap) = (s.revision(), s.snapshot());
                drop(s);
                link.send(&done);
                if let Some(d) = delta {
                    link.send(&d);
                    link.mesh(rev, &snap);
                }
            }
            Err(e) => {
                session.lock().unwrap().finish_retarget(None);
                link.send(&ServerMessage::error("retarget_failed", e.to_string()));
            }
        }
    });
}
