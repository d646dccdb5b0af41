//! HTTP service hosting chat sessions against a loaded checkpoint. Routes and
//! payloads are described in `docs/service-contract.md`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use uniconv::config::{ServiceConfig, TaskMode};
use uniconv::inference::{Engine, Session, StepOptions, TurnRecord};
use uniconv::kb::KnowledgeBase;
use uniconv::model::UniConv;
use uniconv::ontology::DialogueState;
use uniconv::text::tokenize;

struct Entry {
    session: Session,
    touched: Instant,
}

type Slot = Arc<tokio::sync::Mutex<Entry>>;

pub struct AppState {
    model: Arc<UniConv>,
    kb: Arc<KnowledgeBase>,
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Slot>>,
}

impl AppState {
    pub fn new(model: UniConv, kb: KnowledgeBase, config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            model: Arc::new(model),
            kb: Arc::new(kb),
            config,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    fn slot(&self, id: &str) -> Result<Slot, ApiError> {
        self.sessions
            .lock()
            .expect("session table")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    /// Drops sessions idle for longer than the configured timeout. Sessions
    /// busy with a request are kept.
    pub fn expire_idle(&self) -> usize {
        let limit = Duration::from_secs(self.config.idle_timeout_secs);
        let mut table = self.sessions.lock().expect("session table");
        let before = table.len();
        table.retain(|_, slot| match slot.try_lock() {
            Ok(e) => e.touched.elapsed() <= limit,
            Err(_) => true,
        });
        before - table.len()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session table").len()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session {id}"))
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<uniconv::Error> for ApiError {
    fn from(e: uniconv::Error) -> Self {
        let status = match e {
            uniconv::Error::Range(_) => StatusCode::CONFLICT,
            uniconv::Error::Contract(_) | uniconv::Error::InvalidState(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.kind(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": { "code": self.code, "message": self.message } }))).into_response()
    }
}

fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    let text = std::str::from_utf8(body).map_err(|_| ApiError::bad_request("body is not UTF-8"))?;
    serde_json::from_str(text).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    mode: Option<TaskMode>,
}

#[derive(Debug, Serialize)]
struct SessionInfo {
    session_id: String,
    mode: TaskMode,
    max_turns: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PostTurn {
    utterance: Option<String>,
    /// Record attention weights for this turn (default true).
    trace: Option<bool>,
    beam_size: Option<usize>,
    /// Current state, required by sessions in c2t mode.
    state: Option<DialogueState>,
}

#[derive(Debug, Serialize)]
pub struct ActProb {
    pub act: String,
    pub prob: f64,
}

#[derive(Debug, Serialize)]
pub struct DbInfo {
    pub count: usize,
    pub bin: usize,
}

#[derive(Debug, Serialize)]
pub struct TurnResponse {
    pub session_id: String,
    pub turn: usize,
    pub utterance: String,
    pub delex: String,
    pub lexical: String,
    pub state: DialogueState,
    /// Predicted acts with their probabilities.
    pub acts: Vec<ActProb>,
    /// Every act of the ontology with its probability.
    pub act_probs: Vec<ActProb>,
    pub db: std::collections::BTreeMap<String, DbInfo>,
    pub active_domain: Option<String>,
    pub trace_ref: Option<String>,
    pub state_truncated: bool,
    pub response_truncated: bool,
}

fn turn_response(model: &UniConv, id: &str, r: &TurnRecord, traced: bool) -> TurnResponse {
    let acts = model.ontology.acts();
    let probs: Vec<ActProb> = acts.iter().zip(&r.act_probs).map(|(a, &p)| ActProb { act: a.clone(), prob: p }).collect();
    TurnResponse {
        session_id: id.to_string(),
        turn: r.turn,
        utterance: r.utterance.join(" "),
        delex: r.delex.join(" "),
        lexical: r.lexical.join(" "),
        state: r.state.clone(),
        acts: probs
            .iter()
            .filter(|p| r.acts.contains(&p.act))
            .map(|p| ActProb {
                act: p.act.clone(),
                prob: p.prob,
            })
            .collect(),
        act_probs: probs,
        db: model
            .ontology
            .domains()
            .iter()
            .zip(&r.db_bins)
            .map(|(d, &bin)| {
                (
                    d.clone(),
                    DbInfo {
                        count: r.db_counts.get(d).copied().unwrap_or(0),
                        bin,
                    },
                )
            })
            .collect(),
        active_domain: r.active_domain.clone(),
        trace_ref: traced.then(|| format!("/sessions/{id}/traces/{}", r.turn)),
        state_truncated: r.state_truncated,
        response_truncated: r.response_truncated,
    }
}

async fn health(State(app): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let m = &app.model;
    Json(json!({
        "status": "ok",
        "domains": m.ontology.domains(),
        "acts": m.ontology.acts(),
        "sessions": app.session_count(),
        "max_turns": app.config.max_turns,
    }))
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    app.expire_idle();
    let req: CreateSession = parse_body(&body)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let mode = req.mode.unwrap_or(TaskMode::E2e);
    let entry = Entry {
        session: Session::new(id.clone(), mode, app.config.max_turns),
        touched: Instant::now(),
    };
    app.sessions
        .lock()
        .expect("session table")
        .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(entry)));
    Ok((
        StatusCode::CREATED,
        Json(SessionInfo {
            session_id: id,
            mode,
            max_turns: app.config.max_turns,
        }),
    ))
}

async fn post_turn(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Result<Json<TurnResponse>, ApiError> {
    let slot = app.slot(&id)?;
    let req: PostTurn = parse_body(&body)?;
    let utterance = req.utterance.ok_or_else(|| ApiError::bad_request("missing field `utterance`"))?;
    let mut entry = slot.lock_owned().await;
    let (model, kb) = (app.model.clone(), app.kb.clone());
    let traced = req.trace.unwrap_or(true);
    let opts = StepOptions {
        respond: true,
        trace: traced,
        beam_size: req.beam_size,
    };
    let (entry, result) = tokio::task::spawn_blocking(move || {
        let engine = Engine::new(&model, &kb);
        let tokens = tokenize(&utterance);
        let r = engine.step_turn(&mut entry.session, &tokens, req.state.as_ref(), opts);
        entry.touched = Instant::now();
        let out = r.map(|rec| turn_response(&model, &entry.session.id, &rec, traced));
        (entry, out)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    drop(entry);
    Ok(Json(result?))
}

async fn get_trace(State(app): State<Arc<AppState>>, Path((id, turn)): Path<(String, String)>) -> Result<Response, ApiError> {
    let slot = app.slot(&id)?;
    let turn: usize = turn.parse().map_err(|_| ApiError::bad_request(format!("turn {turn} is not a number")))?;
    let mut e = slot.lock().await;
    e.touched = Instant::now();
    let t = e
        .session
        .export_trace(turn)
        .map_err(|err| ApiError::new(StatusCode::NOT_FOUND, "trace_not_found", err.to_string()))?;
    Ok(Json(t).into_response())
}

async fn get_transcript(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = app.slot(&id)?;
    let mut e = slot.lock().await;
    e.touched = Instant::now();
    let s = &e.session;
    Ok(Json(json!({ "session_id": s.id, "mode": s.mode, "turns": s.transcript })).into_response())
}

async fn delete_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    app.sessions
        .lock()
        .expect("session table")
        .remove(&id)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or_else(|| ApiError::not_found(&id))
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/turns", post(post_turn))
        .route("/sessions/{id}/transcript", get(get_transcript))
        .route("/sessions/{id}/traces/{turn}", get(get_trace))
        .with_state(app)
}

/// Serves until the process is stopped, expiring idle sessions once a minute.
pub async fn serve(app: Arc<AppState>, port: u16) -> std::io::Result<()> {
    let sweeper = app.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let n = sweeper.expire_idle();
            if n > 0 {
                log::info!("expired {n} idle sessions");
            }
        }
    });
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app)).await
}
