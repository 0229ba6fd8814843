//! Stateless HTTP API over a loaded model and cohort: catalog and patient
//! lookup, what-if scoring and plan recommendations.
//!
//! Every response is a pure function of the model file, the cohort file and
//! the request body. Searches use simulation-count budgets only and run on
//! the blocking pool, one tree per request.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use caresel_core::harness::DecileBounds;
use caresel_core::scoring::score_risk;
use caresel_core::{
    search, Budget, CarePlan, Cohort, EnsembleModel, Error, PatientRecord, SearchConfig, SearchMode, SearchResult,
    Service,
};

pub const DEFAULT_MAX_SIMULATIONS: u64 = 200_000;

pub struct AppState {
    pub model: EnsembleModel,
    pub cohort: Cohort,
    /// Largest simulation budget a request may ask for.
    pub max_simulations: u64,
    /// Risk-decile boundaries of the evaluation test set, when one is loaded.
    pub deciles: Option<Vec<DecileBounds>>,
    pub model_id: String,
    pub cohort_id: String,
}

impl AppState {
    pub fn new(model: EnsembleModel, cohort: Cohort) -> Self {
        AppState {
            model,
            cohort,
            max_simulations: DEFAULT_MAX_SIMULATIONS,
            deciles: None,
            model_id: String::new(),
            cohort_id: String::new(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub invalid_codes: Vec<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: error.into(),
                invalid_codes: Vec::new(),
            },
        }
    }

    fn unprocessable(error: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, error)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownPatient(_) => ApiError::new(StatusCode::NOT_FOUND, e.to_string()),
            Error::UnknownServices(codes) => ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: ErrorBody {
                    error: format!("unknown service code(s): {}", codes.join(", ")),
                    invalid_codes: codes,
                },
            },
            Error::InvalidPlan(_) | Error::InvalidConfig(_) => ApiError::unprocessable(e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub model: String,
    pub cohort: String,
    pub patients: usize,
    pub services: usize,
    pub max_simulations: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PatientView {
    pub id: String,
    pub characteristics: BTreeMap<String, f64>,
    pub los: f64,
    pub observed_plan: Vec<String>,
    pub observed_outcome: bool,
    pub initial_risk: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub patient_id: String,
    pub plan: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub risk: f64,
    pub reward: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecommendRequest {
    pub patient_id: String,
    #[serde(default = "default_mode")]
    pub mode: SearchMode,
    /// Simulation count.
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default = "default_plan_size")]
    pub plan_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pins: Vec<String>,
}

fn default_mode() -> SearchMode {
    SearchMode::PhAndTime
}

fn default_budget() -> u64 {
    10_000
}

fn default_plan_size() -> usize {
    8
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/catalog", get(catalog))
        .route("/patients", get(patients))
        .route("/patients/{id}", get(patient))
        .route("/deciles", get(deciles))
        .route("/score", post(score))
        .route("/recommend", post(recommend))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}

async fn health(State(st): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        model: st.model_id.clone(),
        cohort: st.cohort_id.clone(),
        patients: st.cohort.len(),
        services: st.cohort.catalog.len(),
        max_simulations: st.max_simulations,
    })
}

async fn catalog(State(st): State<Arc<AppState>>) -> Json<Vec<Service>> {
    Json(st.cohort.catalog.services().to_vec())
}

fn view(st: &AppState, p: &PatientRecord) -> Result<PatientView, ApiError> {
    Ok(PatientView {
        id: p.id.clone(),
        characteristics: p.characteristics.clone(),
        los: p.los,
        observed_plan: st.cohort.catalog.plan_codes(&p.observed_plan),
        observed_outcome: p.observed_outcome,
        initial_risk: score_risk(&st.model, p, &p.observed_plan)?,
    })
}

fn find<'a>(st: &'a AppState, id: &str) -> Result<&'a PatientRecord, ApiError> {
    st.cohort
        .patient(id)
        .ok_or_else(|| Error::UnknownPatient(id.to_string()).into())
}

async fn patients(State(st): State<Arc<AppState>>) -> ApiResult<Vec<PatientView>> {
    let out = st
        .cohort
        .patients
        .iter()
        .map(|p| view(&st, p))
        .collect::<Result<_, _>>()?;
    Ok(Json(out))
}

async fn patient(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<PatientView> {
    Ok(Json(view(&st, find(&st, &id)?)?))
}

async fn deciles(State(st): State<Arc<AppState>>) -> ApiResult<Vec<DecileBounds>> {
    st.deciles
        .clone()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no test set loaded"))
}

fn parse_plan(st: &AppState, codes: &[String]) -> Result<CarePlan, ApiError> {
    Ok(st.cohort.catalog.plan_from_codes(codes)?)
}

async fn score(State(st): State<Arc<AppState>>, Json(req): Json<ScoreRequest>) -> ApiResult<ScoreResponse> {
    let p = find(&st, &req.patient_id)?;
    let plan = parse_plan(&st, &req.plan)?;
    let risk = score_risk(&st.model, p, &plan)?;
    Ok(Json(ScoreResponse {
        risk,
        reward: 1.0 - risk,
    }))
}

/// The search configuration a recommendation request maps to; the CLI
/// builds the same one from its flags.
pub fn recommend_config(st: &AppState, req: &RecommendRequest) -> Result<SearchConfig, ApiError> {
    if req.budget > st.max_simulations {
        return Err(ApiError::unprocessable(format!(
            "budget {} exceeds the server cap of {} simulations; lower it or run the search from the command line",
            req.budget, st.max_simulations
        )));
    }
    // rejects unknown and duplicate codes; the pins keep their request order
    parse_plan(st, &req.pins)?;
    let pinned = req
        .pins
        .iter()
        .map(|c| st.cohort.catalog.lookup(c).expect("validated"))
        .collect();
    let cfg = SearchConfig {
        mode: req.mode,
        budget: Budget::Simulations(req.budget),
        max_plan_size: req.plan_size,
        seed: req.seed,
        pinned,
        ..SearchConfig::default()
    };
    cfg.validate(st.cohort.catalog.len())?;
    Ok(cfg)
}

async fn recommend(State(st): State<Arc<AppState>>, Json(req): Json<RecommendRequest>) -> ApiResult<SearchResult> {
    find(&st, &req.patient_id)?;
    let cfg = recommend_config(&st, &req)?;
    let result = tokio::task::spawn_blocking(move || {
        let p = st.cohort.patient(&req.patient_id).expect("checked above");
        search(&st.model, &st.cohort.catalog, p, &cfg)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("search task failed: {e}")))??;
    Ok(Json(result))
}
