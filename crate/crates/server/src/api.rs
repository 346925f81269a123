//! JSON routes under `/v1`.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use xrl::agent::LearningConfig;
use xrl::foil::{FoilError, Position, QueryDocument, QueryError};
use xrl::interpret::describe_state;
use xrl::pipeline::{ExplainOptions, PipelineError};
use xrl::{
    Action, ConceptVec, EmpiricalModel, EnvState, FeatureVec, FoilQuery, GridLayout, QTable,
    RolloutMode, Vocabulary,
};

use crate::session::{Session, SessionSpec, SessionStore, Slot, WhichPolicy};

#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position: Option<Position>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
                position: None,
                payload: None,
            },
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id:?}"))
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        let mut err = Self::new(StatusCode::BAD_REQUEST, "query_error", e.to_string());
        err.body.position = e.position();
        err
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Foil(FoilError::Query(q)) => q.into(),
            PipelineError::Foil(e) => Self::new(StatusCode::BAD_REQUEST, "invalid_options", e.to_string()),
            PipelineError::Explain(e) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "explain_failed", e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub struct AppState {
    pub store: SessionStore,
    /// Wall-clock limit for one query or trajectory.
    pub budget: Duration,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session).get(list_sessions))
        .route("/v1/sessions/{id}", get(view_session).delete(delete_session))
        .route("/v1/sessions/{id}/query", post(run_query))
        .route("/v1/sessions/{id}/step", post(step))
        .route("/v1/sessions/{id}/trajectory", get(trajectory))
        .with_state(state)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateSession {
    /// Layout in grid text; the canonical layout when absent.
    pub layout: Option<String>,
    pub qtab: Option<String>,
    pub tmodel: Option<String>,
    pub learning: Option<LearningConfig>,
    pub options: Option<ExplainOptions>,
    /// Seed for stepping the environment.
    pub seed: u64,
    /// Return at once and train in the background.
    pub background: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayoutInfo {
    pub width: i32,
    pub height: i32,
    pub grid: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    pub id: String,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ready: Option<ReadyView>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReadyView {
    pub created: u64,
    pub updated: u64,
    pub layout: LayoutInfo,
    pub state: EnvState,
    pub concepts: ConceptVec,
    pub features: FeatureVec,
    pub greedy_action: Action,
    pub q_values: BTreeMap<Action, f64>,
    pub vocabulary: Vocabulary,
    pub options: ExplainOptions,
    pub last_query: Option<String>,
}

fn ready_view(s: &Session) -> ReadyView {
    let features = s.layout.features(&s.current);
    ReadyView {
        created: s.created,
        updated: s.updated,
        layout: LayoutInfo {
            width: s.layout.width,
            height: s.layout.height,
            grid: s.layout.to_grid_text(),
        },
        state: s.current,
        concepts: describe_state(&s.layout, &s.current),
        greedy_action: s.q_t.greedy(&features),
        q_values: Action::ALL.into_iter().map(|a| (a, s.q_t.get(&features, a))).collect(),
        features,
        vocabulary: s.layout.vocabulary.clone(),
        options: s.defaults.clone(),
        last_query: s.last_query.as_ref().map(|(q, _)| q.to_string()),
    }
}

fn view(id: &str, slot: &Slot) -> SessionView {
    let (status, error, ready) = match slot {
        Slot::Training => ("training", None, None),
        Slot::Failed(e) => ("failed", Some(e.clone()), None),
        Slot::Ready(s) => ("ready", None, Some(ready_view(s))),
    };
    SessionView {
        id: id.to_string(),
        status,
        error,
        ready,
    }
}

fn slot(state: &AppState, id: &str) -> ApiResult<Arc<Mutex<Slot>>> {
    state.store.get(id).ok_or_else(|| ApiError::not_found(id))
}

/// Runs `f` on the ready session in a blocking task under the time budget.
async fn with_session<T, F>(state: &Arc<AppState>, id: &str, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Session, &SessionStore) -> ApiResult<T> + Send + 'static,
{
    let slot = slot(state, id)?;
    let st = state.clone();
    let task = tokio::task::spawn_blocking(move || {
        let mut guard = slot.lock().expect("session poisoned");
        match &mut *guard {
            Slot::Training => Err(ApiError::new(StatusCode::CONFLICT, "training", "session is still training")),
            Slot::Failed(e) => Err(ApiError::new(StatusCode::CONFLICT, "training_failed", e.clone())),
            Slot::Ready(s) => f(s, &st.store),
        }
    });
    match tokio::time::timeout(state.budget, task).await {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())),
        Err(_) => Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "time_budget_exceeded",
            format!("no answer within {} ms", state.budget.as_millis()),
        )),
    }
}

fn spec_from(req: CreateSession) -> ApiResult<SessionSpec> {
    let layout = match &req.layout {
        Some(text) => GridLayout::parse(text).map_err(|e| ApiError::bad_request(format!("layout: {e}")))?,
        None => GridLayout::canonical(),
    };
    let learning = req.learning.unwrap_or_default();
    learning.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    let trained = match (&req.qtab, &req.tmodel) {
        (None, None) => None,
        (Some(q), model) => {
            let q = QTable::from_text(q).map_err(|e| ApiError::bad_request(format!("qtab: {e}")))?;
            let model = match model {
                Some(m) => EmpiricalModel::from_text(m).map_err(|e| ApiError::bad_request(format!("tmodel: {e}")))?,
                None => EmpiricalModel::new(0.0),
            };
            Some((q, model))
        }
        (None, Some(_)) => return Err(ApiError::bad_request("tmodel given without qtab")),
    };
    let defaults = req.options.unwrap_or_default();
    defaults
        .params
        .validate(learning.lambda)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_options", e.to_string()))?;
    Ok(SessionSpec {
        layout,
        trained,
        learning,
        defaults,
        seed: req.seed,
    })
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Option<Json<CreateSession>>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let background = req.background;
    let spec = spec_from(req)?;
    let (id, slot) = state.store.reserve();
    let st = state.clone();
    let (sid, sslot) = (id.clone(), slot.clone());
    let job = tokio::task::spawn_blocking(move || st.store.finish(sid, &sslot, spec));
    if background {
        return Ok((StatusCode::ACCEPTED, Json(view(&id, &Slot::Training))));
    }
    job.await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    let guard = slot.lock().expect("session poisoned");
    Ok((StatusCode::CREATED, Json(view(&id, &guard))))
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(state.store.ids())
}

async fn view_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let slot = slot(&state, &id)?;
    let guard = slot.lock().expect("session poisoned");
    Ok(Json(view(&id, &guard)))
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    if state.store.remove(&id) {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::not_found(&id))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum QueryInput {
    Text(String),
    Document(QueryDocument),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub query: QueryInput,
    /// Partial options merged over the session defaults.
    #[serde(default)]
    pub options: Option<Value>,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Session defaults with `overrides` applied field by field.
pub fn apply_overrides(defaults: &ExplainOptions, overrides: Option<Value>) -> ApiResult<ExplainOptions> {
    let Some(over) = overrides else {
        return Ok(defaults.clone());
    };
    let mut base = serde_json::to_value(defaults).expect("options serialize");
    merge(&mut base, over);
    serde_json::from_value(base).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_options", e.to_string()))
}

async fn run_query(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<QueryRequest>,
) -> ApiResult<Json<Value>> {
    let query = match req.query {
        QueryInput::Text(t) => FoilQuery::parse(&t)?,
        QueryInput::Document(d) => FoilQuery::from_document(&d)?,
    };
    let overrides = req.options;
    let payload = with_session(&state, &id, move |s, store| {
        let options = apply_overrides(&s.defaults, overrides)?;
        let payload = s.query(query, options)?;
        store.snapshot(s);
        Ok(payload)
    })
    .await?;
    let json = serde_json::to_value(&payload).expect("payload serializes");
    if payload.partial {
        let mut err = ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "partial_explanation",
            "some transitions are unknown to the learned model",
        );
        err.body.payload = Some(json);
        return Err(err);
    }
    Ok(Json(json))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRequest {
    /// An action name, or `auto` for the learned greedy action.
    pub action: String,
}

async fn step(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<StepRequest>,
) -> ApiResult<Json<crate::session::StepOutcome>> {
    let action = match req.action.as_str() {
        "auto" => None,
        name => Some(Action::parse(name).ok_or_else(|| {
            ApiError::new(StatusCode::BAD_REQUEST, "unknown_action", format!("unknown action {name:?}"))
        })?),
    };
    let out = with_session(&state, &id, move |s, store| {
        let out = s.step(action);
        store.snapshot(s);
        Ok(out)
    })
    .await?;
    Ok(Json(out))
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryParams {
    pub policy: Option<WhichPolicy>,
    pub n: Option<u32>,
    /// `most-probable` or `sampled`.
    pub mode: Option<String>,
    pub seed: Option<u64>,
}

async fn trajectory(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(p): Query<TrajectoryParams>,
) -> ApiResult<Json<xrl::rollout::TrajectoryExport>> {
    let mode = match (p.mode.as_deref(), p.seed) {
        (None | Some("most-probable"), None) => None,
        (None | Some("sampled"), Some(seed)) => Some(RolloutMode::Sampled(seed)),
        (Some("sampled"), None) => Some(RolloutMode::Sampled(0)),
        (Some("most-probable"), Some(_)) => return Err(ApiError::bad_request("seed only applies to sampled mode")),
        (Some(other), _) => return Err(ApiError::bad_request(format!("unknown mode {other:?}"))),
    };
    let which = p.policy.unwrap_or(WhichPolicy::Learned);
    let export = with_session(&state, &id, move |s, _| {
        let defaults = match (which, &s.last_query) {
            (WhichPolicy::LastFoil, Some((_, o))) => o.clone(),
            _ => s.defaults.clone(),
        };
        let n = p.n.unwrap_or_else(|| defaults.params.horizon());
        let mode = mode.unwrap_or(defaults.mode);
        match s.trajectory(which, n, mode) {
            None => Err(ApiError::new(StatusCode::CONFLICT, "no_foil", "no query has been run in this session")),
            Some(r) => r.map_err(ApiError::from),
        }
    })
    .await?;
    Ok(Json(export))
}
