//! HTTP trial-conduct service.
//!
//! Each trial lives in `<data-dir>/<trial_id>.json`. Every mutation is written
//! (temp file, fsync, rename) before its response is sent, and the directory
//! is reloaded on start, so a restarted server continues exactly where the
//! last acknowledged request left it.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pcrm_core::pcrm::{pattern_curves, AssignmentBasis, MtdEntry};
use pcrm_core::trial::state_document;
use pcrm_core::{
    finalize, recommend_cohort, step, DesignConfig, DoseLevel, Error as CoreError, MtdTable, PatientRecord, Phase,
    SelectionEvent, TrialState,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const SESSION_VERSION: &str = "pcrm-session-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingPatient {
    pub covariates: Vec<u8>,
    pub dose_level: DoseLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingCohort {
    pub cohort_index: usize,
    pub basis: AssignmentBasis,
    pub patients: Vec<PendingPatient>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditKind {
    Created,
    CohortAssigned { cohort_index: usize, doses: Vec<DoseLevel>, basis: AssignmentBasis },
    OutcomesRecorded { cohort_index: usize, dlt: Vec<u8>, phase: Phase, events: Vec<SelectionEvent> },
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: usize,
    /// Milliseconds since the Unix epoch.
    pub at_ms: u64,
    #[serde(flatten)]
    pub kind: AuditKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSession {
    pub version: String,
    pub trial_id: String,
    #[serde(with = "state_document")]
    pub state: TrialState,
    pub pending_cohort: Option<PendingCohort>,
    pub audit: Vec<AuditEntry>,
    pub final_table: Option<MtdTable>,
}

impl TrialSession {
    fn record(&mut self, kind: AuditKind) {
        let at_ms = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
        self.audit.push(AuditEntry { seq: self.audit.len() + 1, at_ms, kind });
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}

/// On-disk session store with one writer per trial.
pub struct Store {
    dir: PathBuf,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<TrialSession>>>>,
}

impl Store {
    /// Opens `dir`, creating it if needed, and loads every session file.
    pub fn open(dir: impl Into<PathBuf>) -> anyhow::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).with_context(|| format!("creating data dir {}", dir.display()))?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = fs::read_to_string(&path)?;
            let session: TrialSession =
                serde_json::from_str(&text).with_context(|| format!("loading {}", path.display()))?;
            if session.version != SESSION_VERSION {
                anyhow::bail!("{}: unsupported session version {:?}", path.display(), session.version);
            }
            sessions.insert(session.trial_id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
        }
        Ok(Self { dir, sessions: Mutex::new(sessions) })
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.lock().expect("store lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn persist(&self, session: &TrialSession) -> anyhow::Result<()> {
        let text = session.to_json()?;
        let path = self.path_for(&session.trial_id);
        let tmp = self.dir.join(format!(".{}.json.tmp", session.trial_id));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        sync_dir(&self.dir);
        Ok(())
    }

    fn get(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<TrialSession>>, ApiError> {
        if !valid_id(id) {
            return Err(ApiError::not_found(id));
        }
        self.sessions.lock().expect("store lock").get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    fn insert(&self, session: TrialSession) -> Result<(), ApiError> {
        self.persist(&session).map_err(ApiError::internal)?;
        self.sessions
            .lock()
            .expect("store lock")
            .insert(session.trial_id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
        Ok(())
    }

    /// Applies `f` to a copy of the session and commits it only after the
    /// copy has been written to disk.
    async fn mutate<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut TrialSession) -> Result<T, ApiError>,
    ) -> Result<(T, TrialSession), ApiError> {
        let handle = self.get(id)?;
        let mut guard = handle.lock().await;
        let mut draft = guard.clone();
        let out = f(&mut draft)?;
        self.persist(&draft).map_err(ApiError::internal)?;
        *guard = draft.clone();
        Ok((out, draft))
    }

    /// Current serialized form of a session, as it would be written to disk.
    pub async fn snapshot(&self, id: &str) -> Option<String> {
        let handle = self.get(id).ok()?;
        let guard = handle.lock().await;
        guard.to_json().ok()
    }
}

#[cfg(unix)]
fn sync_dir(dir: &Path) {
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
}

#[cfg(not(unix))]
fn sync_dir(_dir: &Path) {}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    field: Option<String>,
    remaining: Option<usize>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), field: None, remaining: None }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no trial with id {id:?}"))
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    fn invalid(field: &str, message: impl Into<String>) -> Self {
        Self { field: Some(field.into()), ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message) }
    }

    fn internal(err: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", err.to_string())
    }

    fn from_core(err: CoreError, field: &str) -> Self {
        match err {
            CoreError::Field { field, message } => Self::invalid(&field, message),
            CoreError::CohortSize { .. } | CoreError::NonBinaryOutcome(_) | CoreError::InvalidArgument(_) => {
                Self::invalid(field, err.to_string())
            }
            CoreError::NotFinal { remaining } => {
                Self { remaining: Some(remaining), ..Self::conflict(err.to_string()) }
            }
            CoreError::Phase { .. } => Self::conflict(err.to_string()),
            other => Self::internal(other),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let Some(f) = self.field {
            body["field"] = json!(f);
        }
        if let Some(r) = self.remaining {
            body["remaining"] = json!(r);
        }
        (self.status, Json(body)).into_response()
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    let text = if body.iter().all(u8::is_ascii_whitespace) { &b"{}"[..] } else { &body[..] };
    serde_json::from_slice(text).map_err(|e| {
        let field = e.to_string().split('`').nth(1).unwrap_or("body").to_string();
        ApiError { field: Some(field), ..ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()) }
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnrollRequest {
    pub covariates: Vec<Vec<u8>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeRequest {
    pub dlt: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatusView {
    pub trial_id: String,
    pub phase: Phase,
    pub enrolled: usize,
    pub remaining: usize,
    pub cohorts: usize,
    pub selected: Vec<usize>,
    pub selected_names: Vec<String>,
    pub tried_doses: Vec<DoseLevel>,
    pub skeleton: Vec<f64>,
    pub labels: Vec<f64>,
    pub pending_cohort: Option<PendingCohort>,
    /// Current recommendation and estimated toxicity curve per pattern of the
    /// selected covariates.
    pub recommendations: Vec<MtdEntry>,
    pub events: Vec<SelectionEvent>,
    pub final_table: Option<MtdTable>,
}

fn status_view(session: &TrialSession) -> Result<StatusView, ApiError> {
    let s = &session.state;
    let recommendations = pattern_curves(s).map_err(ApiError::internal)?;
    Ok(StatusView {
        trial_id: session.trial_id.clone(),
        phase: s.phase,
        enrolled: s.patients.len(),
        remaining: s.remaining(),
        cohorts: s.cohorts(),
        selected: s.selected.clone(),
        selected_names: s.selected.iter().map(|&c| s.config.covariates.names[c].clone()).collect(),
        tried_doses: s.tried_doses.iter().copied().collect(),
        skeleton: s.grid.skeleton.clone(),
        labels: s.grid.labels.clone(),
        pending_cohort: session.pending_cohort.clone(),
        recommendations,
        events: s.events.clone(),
        final_table: session.final_table.clone(),
    })
}

type AppState = Arc<Store>;

async fn create_trial(State(store): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let config: DesignConfig = parse_body(&body)?;
    let state = TrialState::new(config).map_err(|e| ApiError::from_core(e, "config"))?;
    let mut session = TrialSession {
        version: SESSION_VERSION.into(),
        trial_id: uuid::Uuid::new_v4().simple().to_string(),
        state,
        pending_cohort: None,
        audit: Vec::new(),
        final_table: None,
    };
    session.record(AuditKind::Created);
    let view = status_view(&session)?;
    store.insert(session)?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn enroll_cohort(
    State(store): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<PendingCohort>, ApiError> {
    let req: EnrollRequest = parse_body(&body)?;
    let (cohort, _) = store
        .mutate(&id, |session| {
            if let Some(p) = &session.pending_cohort {
                return Err(ApiError::conflict(format!(
                    "cohort {} is awaiting outcomes; submit them before enrolling again",
                    p.cohort_index
                )));
            }
            if session.state.phase == Phase::Final {
                return Err(ApiError::conflict("trial has reached N_max; finalize it"));
            }
            let plan = recommend_cohort(&session.state, &req.covariates)
                .map_err(|e| ApiError::from_core(e, "covariates"))?;
            let cohort = PendingCohort {
                cohort_index: session.state.cohorts(),
                basis: plan.basis,
                patients: req
                    .covariates
                    .iter()
                    .zip(&plan.doses)
                    .map(|(z, &d)| PendingPatient { covariates: z.clone(), dose_level: d })
                    .collect(),
            };
            session.pending_cohort = Some(cohort.clone());
            session.record(AuditKind::CohortAssigned {
                cohort_index: cohort.cohort_index,
                doses: plan.doses,
                basis: plan.basis,
            });
            Ok(cohort)
        })
        .await?;
    Ok(Json(cohort))
}

async fn submit_outcomes(
    State(store): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ApiError> {
    let req: OutcomeRequest = parse_body(&body)?;
    let (events, session) = store
        .mutate(&id, |session| {
            let Some(pending) = session.pending_cohort.clone() else {
                return Err(ApiError::conflict("no cohort is awaiting outcomes; enroll one first"));
            };
            if req.dlt.len() != pending.patients.len() {
                return Err(ApiError::invalid(
                    "dlt",
                    format!("expected {} outcomes, got {}", pending.patients.len(), req.dlt.len()),
                ));
            }
            if let Some(v) = req.dlt.iter().find(|v| **v > 1) {
                return Err(ApiError::invalid("dlt", format!("outcome {v} is not 0 or 1")));
            }
            let cohort: Vec<PatientRecord> = pending
                .patients
                .iter()
                .zip(&req.dlt)
                .map(|(p, &y)| PatientRecord {
                    id: 0,
                    covariates: p.covariates.clone(),
                    dose_level: p.dose_level,
                    dlt: y,
                    cohort_index: 0,
                })
                .collect();
            let (next, events) = step(&session.state, cohort).map_err(|e| ApiError::from_core(e, "dlt"))?;
            session.state = next;
            session.pending_cohort = None;
            session.record(AuditKind::OutcomesRecorded {
                cohort_index: pending.cohort_index,
                dlt: req.dlt.clone(),
                phase: session.state.phase,
                events: events.clone(),
            });
            Ok(events)
        })
        .await?;
    let view = status_view(&session)?;
    Ok(Json(json!({ "new_events": events, "status": view })))
}

async fn trial_status(State(store): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<StatusView>, ApiError> {
    let handle = store.get(&id)?;
    let session = handle.lock().await;
    Ok(Json(status_view(&session)?))
}

async fn finalize_trial(State(store): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<MtdTable>, ApiError> {
    {
        let handle = store.get(&id)?;
        let session = handle.lock().await;
        if let Some(t) = &session.final_table {
            return Ok(Json(t.clone()));
        }
    }
    let (table, _) = store
        .mutate(&id, |session| {
            if let Some(t) = &session.final_table {
                return Ok(t.clone());
            }
            let table = finalize(&session.state).map_err(|e| ApiError::from_core(e, "trial"))?;
            session.final_table = Some(table.clone());
            session.record(AuditKind::Finalized);
            Ok(table)
        })
        .await?;
    Ok(Json(table))
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/trials", post(create_trial))
        .route("/trials/{id}", get(trial_status))
        .route("/trials/{id}/cohort", post(enroll_cohort))
        .route("/trials/{id}/outcomes", post(submit_outcomes))
        .route("/trials/{id}/finalize", post(finalize_trial))
        .with_state(store)
}

/// Serves until Ctrl-C.
pub async fn serve(port: u16, data_dir: PathBuf) -> anyhow::Result<()> {
    let store = Arc::new(Store::open(&data_dir)?);
    let n = store.ids().len();
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await.with_context(|| format!("binding port {port}"))?;
    eprintln!("pcrm: serving {n} trial(s) from {} on {}", data_dir.display(), listener.local_addr()?);
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
