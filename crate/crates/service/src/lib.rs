//! Session-oriented HTTP API over a trained selector and, optionally, a
//! generator.
//!
//! ```text
//! POST /sessions                     {"topic"?, "knowledge_pool"? | "episode_id", "turn_index"?}
//! POST /sessions/{id}/messages       {"text", "override_id"?}
//! GET  /sessions/{id}
//! GET  /healthz
//! ```

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};
use tower_http::cors::CorsLayer;

use cet2_core::corpus::{DialogueEpisode, KnowledgeCandidate, Utterance};
use cet2_core::generator::{DecodingConfig, ToyCausalLm};
use cet2_core::model::Cet2Model;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionEntry {
    /// 1-based agent turn.
    pub turn: usize,
    pub selected_id: String,
    pub overridden: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub topic: String,
    pub knowledge_pool: Vec<KnowledgeCandidate>,
    pub transcript: Vec<Utterance>,
    pub selection_history: Vec<SelectionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub candidate_id: String,
    pub text: String,
    pub prob: f64,
    pub v_coh_norm: f64,
    pub v_cro_norm: f64,
    /// Whether this candidate is the previous turn's selection; absent on the
    /// first turn.
    pub adhesive: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub turn: usize,
    pub ranked: Vec<RankedCandidate>,
    /// Knowledge used for the response: the override when given, otherwise the
    /// top-ranked candidate.
    pub selected_id: String,
    pub predicted_id: String,
    pub overridden: bool,
    pub response: String,
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub topic: Option<String>,
    #[serde(default)]
    pub knowledge_pool: Option<Vec<KnowledgeCandidate>>,
    #[serde(default)]
    pub episode_id: Option<String>,
    #[serde(default)]
    pub turn_index: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub topic: String,
    pub num_candidates: usize,
}

#[derive(Debug, Deserialize)]
pub struct PostMessage {
    pub text: String,
    #[serde(default)]
    pub override_id: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, what)
    }

    fn unprocessable(what: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, what)
    }

    fn internal(err: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, err.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(serde_json::json!({ "error": self.message })),
        )
            .into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

pub struct Models {
    pub selector: Cet2Model,
    /// Without a generator the response is the selected knowledge text.
    pub generator: Option<ToyCausalLm>,
    pub decoding: DecodingConfig,
}

pub struct AppState {
    models: Arc<Models>,
    episodes: HashMap<String, DialogueEpisode>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(models: Models, episodes: Vec<DialogueEpisode>) -> Arc<Self> {
        Arc::new(Self {
            models: Arc::new(models),
            episodes: episodes
                .into_iter()
                .map(|e| (e.episode_id.clone(), e))
                .collect(),
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    /// All sessions ordered by id, for persistence on shutdown.
    pub async fn snapshot(&self) -> Vec<Session> {
        let handles: Vec<_> = self.sessions.read().await.values().cloned().collect();
        let mut out = Vec::with_capacity(handles.len());
        for h in handles {
            out.push(h.lock().await.clone());
        }
        out.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        out
    }

    pub async fn save_sessions(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(&self.snapshot().await)?;
        std::fs::write(path, json)
    }

    async fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<Created>)> {
    let (topic, pool) = match (&req.knowledge_pool, &req.episode_id) {
        (Some(pool), _) => (req.topic.clone().unwrap_or_default(), pool.clone()),
        (None, Some(ep_id)) => {
            let ep = state
                .episodes
                .get(ep_id)
                .ok_or_else(|| ApiError::not_found(format!("no episode {ep_id}")))?;
            let t = req.turn_index.unwrap_or(0);
            let turn = ep
                .turns
                .get(t)
                .ok_or_else(|| ApiError::not_found(format!("episode {ep_id} has no turn {t}")))?;
            (
                req.topic.clone().unwrap_or_else(|| ep.topic.clone()),
                turn.candidates.clone(),
            )
        }
        (None, None) => {
            return Err(ApiError::unprocessable(
                "give a knowledge_pool or an episode_id",
            ))
        }
    };
    if pool.is_empty() {
        return Err(ApiError::unprocessable("knowledge pool is empty"));
    }
    let mut ids = HashSet::new();
    if let Some(dup) = pool.iter().find(|c| !ids.insert(c.id.as_str())) {
        return Err(ApiError::unprocessable(format!(
            "duplicate candidate id {}",
            dup.id
        )));
    }
    let session_id = format!("s{}", state.next_id.fetch_add(1, Ordering::Relaxed));
    let created = Created {
        session_id: session_id.clone(),
        topic: topic.clone(),
        num_candidates: pool.len(),
    };
    let session = Session {
        session_id: session_id.clone(),
        topic,
        knowledge_pool: pool,
        transcript: Vec::new(),
        selection_history: Vec::new(),
    };
    state
        .sessions
        .write()
        .await
        .insert(session_id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(created)))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Session>> {
    let session = state.session(&id).await?;
    let snapshot = session.lock().await.clone();
    Ok(Json(snapshot))
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<PostMessage>,
) -> ApiResult<Json<TurnResult>> {
    let session = state.session(&id).await?;
    // held for the whole turn so posts to one session are serialized
    let mut guard = session.lock().await;
    if req.text.trim().is_empty() {
        return Err(ApiError::unprocessable("message text is empty"));
    }
    if let Some(o) = &req.override_id {
        if !guard.knowledge_pool.iter().any(|c| &c.id == o) {
            return Err(ApiError::unprocessable(format!(
                "override {o} is not in the pool"
            )));
        }
    }
    let snapshot = guard.clone();
    let models = state.models.clone();
    let text = req.text.clone();
    let result = tokio::task::spawn_blocking(move || {
        run_turn(&models, &snapshot, &req.text, req.override_id.as_deref())
    })
    .await
    .map_err(ApiError::internal)??;
    guard.transcript.push(Utterance::user(text));
    guard
        .transcript
        .push(Utterance::agent(result.response.clone()));
    guard.selection_history.push(SelectionEntry {
        turn: result.turn,
        selected_id: result.selected_id.clone(),
        overridden: result.overridden,
    });
    Ok(Json(result))
}

/// Scores and answers one user message against a session snapshot.
pub fn run_turn(
    models: &Models,
    session: &Session,
    text: &str,
    override_id: Option<&str>,
) -> ApiResult<TurnResult> {
    let window = models.selector.config().window_l;
    let exchanges = session.transcript.len() / 2;
    let keep = exchanges.min(window) * 2;
    let mut context: Vec<Utterance> =
        session.transcript[session.transcript.len() - keep..].to_vec();
    context.push(Utterance::user(text));
    let prev = session.selection_history.last().and_then(|h| {
        session
            .knowledge_pool
            .iter()
            .find(|c| c.id == h.selected_id)
    });
    let scores = models
        .selector
        .score_turn(
            &context,
            &session.knowledge_pool,
            prev.map(|c| c.text.as_str()),
        )
        .map_err(ApiError::internal)?;
    let mut order: Vec<usize> = (0..scores.probs.len()).collect();
    order.sort_by(|&a, &b| scores.probs[b].total_cmp(&scores.probs[a]).then(a.cmp(&b)));
    let ranked = order
        .iter()
        .map(|&i| {
            let c = &session.knowledge_pool[i];
            RankedCandidate {
                candidate_id: c.id.clone(),
                text: c.text.clone(),
                prob: scores.probs[i],
                v_coh_norm: scores.v_coh_norms[i],
                v_cro_norm: scores.v_cro_norms[i],
                adhesive: prev.map(|p| p.id == c.id),
            }
        })
        .collect::<Vec<_>>();
    let predicted = &session.knowledge_pool[order[0]];
    let selected = match override_id {
        Some(o) => session
            .knowledge_pool
            .iter()
            .find(|c| c.id == o)
            .ok_or_else(|| ApiError::unprocessable(format!("override {o} is not in the pool")))?,
        None => predicted,
    };
    let response = match &models.generator {
        Some(g) => g
            .generate(&context, &selected.text, &models.decoding)
            .map_err(ApiError::internal)?,
        None => selected.text.clone(),
    };
    Ok(TurnResult {
        turn: session.selection_history.len() + 1,
        ranked,
        selected_id: selected.id.clone(),
        predicted_id: predicted.id.clone(),
        overridden: override_id.is_some(),
        response,
    })
}
