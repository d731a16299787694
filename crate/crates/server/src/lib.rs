//! HTTP/JSON front end for the annotation store.
//!
//! | method | path                               | body / result                     |
//! |--------|------------------------------------|-----------------------------------|
//! | GET    | `/health`                          | `{"status":"ok"}`                 |
//! | POST   | `/sessions`                        | create a session → `SessionView`  |
//! | GET    | `/sessions/{annotator}/next`       | next conversation, 204 when done  |
//! | POST   | `/sessions/{annotator}/records`    | submit a record → `SubmitAck`     |
//! | GET    | `/tally`                           | `Tally` in method labels          |
//! | GET    | `/export`                          | CSV in method labels              |
//!
//! The agent permutation stays inside the store; no response carries it.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ctxprompt::annotation::{AnnotationError, AnnotationRecord, AnnotationStore};
use serde::{Deserialize, Serialize};

pub type SharedStore = Arc<RwLock<AnnotationStore>>;

pub fn shared(store: AnnotationStore) -> SharedStore {
    Arc::new(RwLock::new(store))
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub annotator: String,
    /// Defaults to every conversation in the store.
    #[serde(default)]
    pub conversations: Option<Vec<String>>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
pub struct SubmitRecord {
    pub conversation_id: String,
    pub turn_winners: Vec<BTreeSet<usize>>,
    pub conversation_winners: BTreeSet<usize>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

pub struct ApiError(StatusCode, String);

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        use AnnotationError::*;
        let status = match &e {
            UnknownConversation(_) | UnknownAnnotator(_) => StatusCode::NOT_FOUND,
            SessionExists(_) | Duplicate { .. } => StatusCode::CONFLICT,
            NotAssigned { .. }
            | MissingTurns { .. }
            | ExtraTurns { .. }
            | EmptyWinners(_)
            | InvalidAgent { .. }
            | InvalidSet { .. }
            | InvalidRequest(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ChainBroken(_) | Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

fn poisoned() -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, "store lock poisoned".into())
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn create_session(
    State(store): State<SharedStore>,
    Json(req): Json<CreateSession>,
) -> Result<Response, ApiError> {
    let mut s = store.write().map_err(|_| poisoned())?;
    let convs = match req.conversations {
        Some(c) => c,
        None => s.conversation_ids().map(str::to_string).collect(),
    };
    let view = s.create_session(&req.annotator, &convs, req.seed)?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn next_conversation(
    State(store): State<SharedStore>,
    Path(annotator): Path<String>,
) -> Result<Response, ApiError> {
    let s = store.read().map_err(|_| poisoned())?;
    Ok(match s.next_conversation(&annotator)? {
        Some(c) => Json(c).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn submit(
    State(store): State<SharedStore>,
    Path(annotator): Path<String>,
    Json(req): Json<SubmitRecord>,
) -> Result<Response, ApiError> {
    let mut s = store.write().map_err(|_| poisoned())?;
    let ack = s.submit(AnnotationRecord {
        annotator,
        conversation_id: req.conversation_id,
        turn_winners: req.turn_winners,
        conversation_winners: req.conversation_winners,
    })?;
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

async fn tally(State(store): State<SharedStore>) -> Result<Response, ApiError> {
    let s = store.read().map_err(|_| poisoned())?;
    Ok(Json(s.tally()?).into_response())
}

async fn export(State(store): State<SharedStore>) -> Result<Response, ApiError> {
    let s = store.read().map_err(|_| poisoned())?;
    let csv = s.export_csv()?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

pub fn router(store: SharedStore) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{annotator}/next", get(next_conversation))
        .route("/sessions/{annotator}/records", post(submit))
        .route("/tally", get(tally))
        .route("/export", get(export))
        .with_state(store)
}

/// Serves until ctrl-c, then writes a final snapshot.
pub async fn serve(addr: SocketAddr, store: SharedStore) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    if let Ok(s) = store.read() {
        if let Err(e) = s.snapshot() {
            log::warn!("final snapshot failed: {e}");
        }
    }
    Ok(())
}
