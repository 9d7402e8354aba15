//! HTTP/JSON interface. Each session's runtime sits behind an async mutex
//! that is only ever try-locked, so a second mutating request on a busy
//! session is refused with `409 busy` instead of queueing. Reads are served
//! from a snapshot that is replaced only after a mutation commits.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use slangquest_core::assessment::{AssessmentError, Elicitation, FamiliarityRating, PosttestResponse};
use slangquest_core::events::FileLog;
use slangquest_core::gm::OrchestratorError;
use slangquest_core::runtime::{LearnerInput, RuntimeError, Services, SessionRuntime, SessionView};
use slangquest_core::session::SessionError;
use slangquest_core::speech::AudioPayload;
use slangquest_core::{HeroId, Mode, PhraseId};
use tokio::sync::Mutex;

use crate::adapters::AudioStore;

const MAX_BODY_BYTES: usize = 25 * 1024 * 1024;

struct Slot {
    runtime: Arc<Mutex<SessionRuntime>>,
    snapshot: RwLock<SessionView>,
}

pub struct AppState {
    services: Arc<Services>,
    log_dir: PathBuf,
    audio: Arc<AudioStore>,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
}

impl AppState {
    pub fn new(services: Arc<Services>, log_dir: impl Into<PathBuf>, audio: Arc<AudioStore>) -> Self {
        Self { services, log_dir: log_dir.into(), audio, sessions: RwLock::default() }
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/turns", post(submit_turn))
        .route("/sessions/{id}/feedback", get(feedback))
        .route("/sessions/{id}/pretest", post(pretest))
        .route("/sessions/{id}/posttest", post(posttest))
        .route("/sessions/{id}/survey", post(survey))
        .route("/audio/{id}", get(audio))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        Self { status, error, message: message.into(), details: None }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", r.body_text())
    }
}

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> Self {
        use StatusCode as S;
        let message = e.to_string();
        match e {
            RuntimeError::Session(SessionError::SessionFinished) => ApiError::new(S::CONFLICT, "session_finished", message),
            RuntimeError::Session(
                SessionError::InvalidHero(_) | SessionError::InvalidPracticeSet(_) | SessionError::WrongMode(_),
            ) => ApiError::new(S::UNPROCESSABLE_ENTITY, "invalid_request", message),
            RuntimeError::Session(_) => ApiError::new(S::BAD_GATEWAY, "provider_failure", message),
            RuntimeError::Provider(OrchestratorError::ProviderFailure { attempts }) => ApiError {
                details: serde_json::to_value(&attempts).ok(),
                ..ApiError::new(S::BAD_GATEWAY, "provider_failure", message)
            },
            RuntimeError::Provider(OrchestratorError::Transport(_)) | RuntimeError::Teacher(_) => {
                ApiError::new(S::BAD_GATEWAY, "provider_unavailable", message)
            }
            RuntimeError::Provider(OrchestratorError::InvalidBudget) => {
                ApiError::new(S::INTERNAL_SERVER_ERROR, "internal", message)
            }
            RuntimeError::Asr(_) => ApiError::new(S::BAD_GATEWAY, "asr_failure", message),
            RuntimeError::Tts(_) => ApiError::new(S::BAD_GATEWAY, "tts_failure", message),
            RuntimeError::Assessment(AssessmentError::SessionNotFinished) => {
                ApiError::new(S::CONFLICT, "session_not_finished", message)
            }
            RuntimeError::Assessment(AssessmentError::GraderFailure(_)) => {
                ApiError::new(S::BAD_GATEWAY, "grader_failure", message)
            }
            RuntimeError::Assessment(_) => ApiError::new(S::UNPROCESSABLE_ENTITY, "invalid_assessment", message),
            RuntimeError::Survey(_) => ApiError::new(S::UNPROCESSABLE_ENTITY, "invalid_survey", message),
            RuntimeError::OutOfOrder(_) => ApiError::new(S::CONFLICT, "out_of_order", message),
            RuntimeError::Log(_) => ApiError::new(S::INTERNAL_SERVER_ERROR, "log_failure", message),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs `f` on the session's runtime on the blocking pool, refreshing the
/// snapshot while still holding the lock.
async fn mutate<T, F>(state: &AppState, id: &str, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut SessionRuntime) -> Result<T, RuntimeError> + Send + 'static,
{
    let slot = state.slot(id)?;
    let mut runtime = slot.runtime.clone().try_lock_owned().map_err(|_| {
        ApiError::new(StatusCode::CONFLICT, "busy", "another request for this session is in progress")
    })?;
    let joined = tokio::task::spawn_blocking(move || {
        let out = f(&mut runtime)?;
        *slot.snapshot.write().expect("snapshot poisoned") = runtime.view();
        Ok::<_, RuntimeError>(out)
    })
    .await;
    match joined {
        Ok(result) => Ok(Json(result?)),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())),
    }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
}

async fn healthz() -> Json<Health> {
    Json(Health { status: "ok" })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionBody {
    pub mode: Mode,
    pub practice: Vec<PhraseId>,
    #[serde(default)]
    pub hero_id: Option<HeroId>,
    #[serde(default)]
    pub participant_id: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct CreatedSession {
    pub session_id: String,
    pub view: SessionView,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSessionBody>, JsonRejection>,
) -> Result<(StatusCode, Json<CreatedSession>), ApiError> {
    let Json(body) = body?;
    let session_id = uuid::Uuid::new_v4().to_string();
    let participant = body.participant_id.unwrap_or_else(|| session_id.clone());
    let services = state.services.clone();
    let path = state.log_dir.join(format!("{session_id}.jsonl"));
    let id = session_id.clone();
    let created = tokio::task::spawn_blocking(move || {
        let log = FileLog::create(&path)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "log_failure", e.to_string()))?;
        SessionRuntime::create(services, Box::new(log), id, participant, body.mode, body.practice, body.hero_id)
            .map_err(|e| {
                // nothing was logged; drop the empty file
                let _ = std::fs::remove_file(&path);
                ApiError::from(e)
            })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    let runtime = created?;
    let view = runtime.view();
    let slot = Slot { runtime: Arc::new(Mutex::new(runtime)), snapshot: RwLock::new(view.clone()) };
    state.sessions.write().expect("session table poisoned").insert(session_id.clone(), Arc::new(slot));
    Ok((StatusCode::CREATED, Json(CreatedSession { session_id, view })))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<SessionView> {
    let slot = state.slot(&id)?;
    let view = slot.snapshot.read().expect("snapshot poisoned").clone();
    Ok(Json(view))
}

/// Exactly one of `text` or `audio`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnBody {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub audio: Option<AudioPayload>,
}

async fn submit_turn(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<TurnBody>, JsonRejection>,
) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(e) => return ApiError::from(e).into_response(),
    };
    let input = match (body.text, body.audio) {
        (Some(text), None) => LearnerInput::Text(text),
        (None, Some(audio)) => LearnerInput::Audio(audio),
        _ => {
            return ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", "send exactly one of `text` or `audio`")
                .into_response()
        }
    };
    mutate(&state, &id, move |rt| rt.submit_turn(input)).await.into_response()
}

async fn feedback(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    mutate(&state, &id, |rt| rt.feedback()).await.into_response()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretestBody {
    pub ratings: Vec<FamiliarityRating>,
    #[serde(default)]
    pub elicitations: Vec<Elicitation>,
}

async fn pretest(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<PretestBody>, JsonRejection>,
) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(e) => return ApiError::from(e).into_response(),
    };
    mutate(&state, &id, move |rt| rt.submit_pretest(&body.ratings, &body.elicitations)).await.into_response()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosttestBody {
    pub responses: Vec<PosttestResponse>,
}

async fn posttest(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<PosttestBody>, JsonRejection>,
) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(e) => return ApiError::from(e).into_response(),
    };
    mutate(&state, &id, move |rt| rt.submit_posttest(&body.responses)).await.into_response()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyBody {
    pub q1: u8,
    pub q2: u8,
    pub q3: u8,
    pub q4: u8,
}

async fn survey(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<SurveyBody>, JsonRejection>,
) -> Response {
    let Json(b) = match body {
        Ok(b) => b,
        Err(e) => return ApiError::from(e).into_response(),
    };
    mutate(&state, &id, move |rt| rt.submit_survey([b.q1, b.q2, b.q3, b.q4])).await.into_response()
}

async fn audio(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.audio.get(&id) {
        Some(clip) => ([(header::CONTENT_TYPE, clip.mime_type)], clip.bytes).into_response(),
        None => ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no audio {id}")).into_response(),
    }
}
