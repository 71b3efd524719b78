//! JSON HTTP API over one shared [`Engine`].
//!
//! | method | path                 | body                                   |
//! |--------|----------------------|----------------------------------------|
//! | GET    | /health              |                                        |
//! | GET    | /services            |                                        |
//! | GET    | /rules               |                                        |
//! | POST   | /rules               | `{subtask, parameter, kind, border}`   |
//! | PUT    | /rules/{id}          | `{border, kind?}`                      |
//! | DELETE | /rules/{id}          |                                        |
//! | POST   | /run                 | `{subtasks, mode, artifact?}`          |
//! | GET    | /runs/{id}/results   |                                        |
//! | POST   | /events              | a `parameter_changed`/`metric_changed` |
//! | POST   | /solve               | a solve request                        |
//!
//! Mutations answer with the seq of the event they produced. Results carry
//! the board epoch and `solved_at` of every solution.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use bboard_core::executor::{Artifact, SimulatedInvoker, Workflow};
use bboard_core::external::{serve_as_solver, ExternalSolver, PartialSolution, SolveRequest, SolverError};
use bboard_core::frontdoor::rules_file::emit_rules;
use bboard_core::frontdoor::{algorithm_controller_run, Applied, Engine, EngineError, RuleMutation, RunMode, RunRecord, SubtaskResult};
use bboard_core::{ChangeKind, ParamName, Rule, RuleId, RuleKind, ServiceDescriptor, TaskId, Value};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Mutex<Engine>>,
    runs: Arc<Mutex<BTreeMap<u64, RunRecord>>>,
    next_run: Arc<AtomicU64>,
    invoker: SimulatedInvoker,
}

impl AppState {
    pub fn new(engine: Engine, seed: u64) -> AppState {
        AppState {
            engine: Arc::new(Mutex::new(engine)),
            runs: Arc::default(),
            next_run: Arc::new(AtomicU64::new(1)),
            invoker: SimulatedInvoker { seed, ..Default::default() },
        }
    }
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match e {
            EngineError::DuplicateActiveRule { .. } => StatusCode::CONFLICT,
            EngineError::UnknownRuleForDelete(_) | EngineError::UnknownRule(_) | EngineError::UnknownSubtask(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e.to_string())
    }
}

fn bad_request(m: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, m.into())
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Numbers sent as strings are read like the rules file reads them.
fn normalize(v: Value) -> Value {
    match v {
        Value::Literal(s) => Value::parse(&s),
        n => n,
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/services", get(services))
        .route("/rules", get(rules).post(add_rule))
        .route("/rules/{id}", put(modify_rule).delete(delete_rule))
        .route("/run", post(run))
        .route("/runs/{id}/results", get(run_results))
        .route("/events", post(events))
        .route("/solve", post(solve))
        .with_state(state)
}

fn last_seq(e: &Engine) -> u64 {
    e.repository().next_seq() - 1
}

async fn health(State(s): State<AppState>) -> Json<serde_json::Value> {
    let seq = last_seq(&s.engine.lock().unwrap());
    Json(json!({ "status": "ok", "seq": seq }))
}

#[derive(Serialize, Deserialize)]
pub struct ServicesResponse {
    pub seq: u64,
    pub services: Vec<ServiceDescriptor>,
}

async fn services(State(s): State<AppState>) -> Json<ServicesResponse> {
    let e = s.engine.lock().unwrap();
    Json(ServicesResponse { seq: last_seq(&e), services: e.repository().catalog().descriptors().to_vec() })
}

#[derive(Serialize, Deserialize)]
pub struct RulesResponse {
    pub seq: u64,
    pub rules: Vec<Rule>,
    /// The same rules in rules-file syntax.
    pub text: String,
}

async fn rules(State(s): State<AppState>) -> Json<RulesResponse> {
    let e = s.engine.lock().unwrap();
    let rules: Vec<Rule> = e.repository().rules().into_iter().cloned().collect();
    Json(RulesResponse { seq: last_seq(&e), text: emit_rules(&rules), rules })
}

/// Answer to every mutation.
#[derive(Serialize, Deserialize)]
pub struct MutationResponse {
    pub seq: u64,
    #[serde(flatten)]
    pub applied: Applied,
}

fn mutation(applied: Applied) -> Json<MutationResponse> {
    Json(MutationResponse { seq: applied.event.seq, applied })
}

#[derive(Deserialize)]
pub struct AddRule {
    subtask: TaskId,
    parameter: ParamName,
    kind: RuleKind,
    border: Value,
}

async fn add_rule(State(s): State<AppState>, Json(b): Json<AddRule>) -> Result<(StatusCode, Json<MutationResponse>), ApiError> {
    let m = RuleMutation::Add { subtask: b.subtask, parameter: b.parameter, kind: b.kind, border: normalize(b.border) };
    let applied = s.engine.lock().unwrap().apply_rule_mutation(m)?;
    Ok((StatusCode::CREATED, mutation(applied)))
}

#[derive(Deserialize)]
pub struct ModifyRule {
    border: Value,
    kind: Option<RuleKind>,
}

async fn modify_rule(State(s): State<AppState>, Path(id): Path<u64>, Json(b): Json<ModifyRule>) -> ApiResult<MutationResponse> {
    let m = RuleMutation::Modify { rule_id: RuleId(id), kind: b.kind, border: normalize(b.border) };
    Ok(mutation(s.engine.lock().unwrap().apply_rule_mutation(m)?))
}

async fn delete_rule(State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<MutationResponse> {
    Ok(mutation(s.engine.lock().unwrap().apply_rule_mutation(RuleMutation::Delete { rule_id: RuleId(id) })?))
}

#[derive(Deserialize)]
pub struct ArtifactBody {
    media_type: String,
    /// Base64.
    data: String,
}

#[derive(Deserialize)]
pub struct RunBody {
    subtasks: Vec<TaskId>,
    mode: RunMode,
    artifact: Option<ArtifactBody>,
}

#[derive(Serialize, Deserialize)]
pub struct RunStarted {
    pub run_id: u64,
    pub seq: u64,
    pub succeeded: bool,
}

async fn run(State(s): State<AppState>, Json(b): Json<RunBody>) -> Result<(StatusCode, Json<RunStarted>), ApiError> {
    if b.mode == RunMode::Confirm {
        return Err(bad_request("confirm mode needs an interactive confirmation and is not available over HTTP; use dry_run, then auto"));
    }
    let artifact = match b.artifact {
        Some(a) => Artifact::new(a.media_type, B64.decode(a.data).map_err(|e| bad_request(format!("artifact data: {e}")))?),
        None => Artifact::new("application/octet-stream", Vec::new()),
    };
    let workflow = Workflow::new(b.subtasks, artifact).map_err(|e| bad_request(e.to_string()))?;
    let id = s.next_run.fetch_add(1, Ordering::Relaxed);
    let engine = s.engine.clone();
    let invoker = s.invoker;
    let record = tokio::task::spawn_blocking(move || algorithm_controller_run(&engine, id, &workflow, b.mode, &invoker, None))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let started = RunStarted { run_id: id, seq: last_seq(&s.engine.lock().unwrap()), succeeded: record.succeeded() };
    s.runs.lock().unwrap().insert(id, record);
    Ok((StatusCode::CREATED, Json(started)))
}

#[derive(Serialize, Deserialize)]
pub struct RunResults {
    pub run_id: u64,
    /// Seq of the latest event the results reflect.
    pub seq: u64,
    pub run: RunRecord,
    /// Current answers for the run's subtasks; they follow later changes.
    pub results: Vec<SubtaskResult>,
}

async fn run_results(State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<RunResults> {
    let run = s.runs.lock().unwrap().get(&id).cloned().ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no run {id}")))?;
    let e = s.engine.lock().unwrap();
    let results = run
        .subtasks
        .iter()
        .map(|t| {
            e.result(t).cloned().unwrap_or_else(|| SubtaskResult {
                subtask: t.clone(),
                epoch: 0,
                seq: last_seq(&e),
                solution: None,
                error: Some("no rules for subtask".into()),
                expansions: 0,
            })
        })
        .collect();
    Ok(Json(RunResults { run_id: id, seq: last_seq(&e), run, results }))
}

async fn events(State(s): State<AppState>, Json(kind): Json<ChangeKind>) -> ApiResult<MutationResponse> {
    let kind = match kind {
        ChangeKind::ParameterChanged { task, provider, offer_index, parameter, value } => {
            ChangeKind::ParameterChanged { task, provider, offer_index, parameter, value: normalize(value) }
        }
        other => other,
    };
    Ok(mutation(s.engine.lock().unwrap().inject(kind)?))
}

async fn solve(Json(req): Json<SolveRequest>) -> ApiResult<Option<PartialSolution>> {
    let answer = tokio::task::spawn_blocking(move || serve_as_solver(&req, None))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    answer.map(Json).map_err(|e| bad_request(e.to_string()))
}

/// Binds and serves until the process ends.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

/// Binds `addr`, then serves on a background thread with its own runtime.
/// Returns the bound address (useful with port 0).
pub fn spawn(addr: SocketAddr, state: AppState) -> std::io::Result<SocketAddr> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let bound = listener.local_addr()?;
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    std::thread::spawn(move || {
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers with the runtime");
            let _ = axum::serve(listener, router(state)).await;
        })
    });
    Ok(bound)
}

/// An external solver reached through another instance's `/solve`.
pub struct HttpSolver {
    pub base_url: String,
    pub timeout: Duration,
}

impl ExternalSolver for HttpSolver {
    fn solve(&self, request: &SolveRequest) -> Result<Option<PartialSolution>, SolverError> {
        let client = reqwest::blocking::Client::builder().timeout(self.timeout).build().map_err(|e| SolverError::Transport(e.to_string()))?;
        let resp = client
            .post(format!("{}/solve", self.base_url.trim_end_matches('/')))
            .json(request)
            .send()
            .map_err(|e| SolverError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(SolverError::Transport(format!("status {}", resp.status())));
        }
        resp.json().map_err(|e| SolverError::Transport(e.to_string()))
    }
}
