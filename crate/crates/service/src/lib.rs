//! JSON-over-HTTP planner service.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/instance` | [`UploadRequest`] → [`UploadResponse`] |
//! | GET | `/warehouses` | → list of [`WarehouseDescriptor`] |
//! | POST | `/runs` | [`RunRequest`] → [`RunStatus`] (202, pending) |
//! | GET | `/runs/{id}` | → [`RunStatus`] |
//! | GET | `/runs/{id}/result` | → [`RunResult`] |
//! | GET | `/runs/{id}/day2` | → [`SecondDay`] |
//! | GET | `/runs/{id}/exports/{warehouse_id}` | → dispatch CSV |
//!
//! Each request belongs to the session named by the `x-allocdss-session`
//! header, or to the `default` session without one. A session holds one
//! loaded instance; uploading again replaces it. Errors are JSON
//! [`ErrorBody`] values: 400 malformed JSON, 404 unknown run or export,
//! 409 wrong run state or empty session, 422 validation with field paths.

mod error;
mod state;
mod wire;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use allocdss_core::io;
use allocdss_core::model::{validate_instance, validate_plan, Instance};

pub use error::{ApiError, ErrorBody, FieldError};
pub use state::{planning_date, run_kpi, AppState, DEFAULT_SESSION};
pub use wire::{
    warehouse_descriptors, RunRequest, RunResult, RunState, RunStatus, RunTimings, SecondDay,
    UploadRequest, UploadResponse, WarehouseDescriptor,
};

pub const SESSION_HEADER: &str = "x-allocdss-session";
pub const ADDR_ENV: &str = "ALLOCDSS_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/instance", post(upload_instance))
        .route("/warehouses", get(list_warehouses))
        .route("/runs", post(submit_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/result", get(get_result))
        .route("/runs/{id}/day2", get(get_day2))
        .route("/runs/{id}/exports/{warehouse_id}", get(get_export))
        .with_state(state)
}

/// Listening address: the flag if given, else `ALLOCDSS_ADDR`, else
/// `127.0.0.1:8080`.
pub fn resolve_addr(flag: Option<&str>) -> Result<SocketAddr, String> {
    let env = std::env::var(ADDR_ENV).ok();
    let raw = flag.or(env.as_deref()).unwrap_or(DEFAULT_ADDR);
    raw.parse()
        .map_err(|e| format!("invalid listen address `{raw}`: {e}"))
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await
}

fn session(headers: &HeaderMap) -> String {
    headers
        .get(SESSION_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|s| !s.is_empty())
        .unwrap_or(DEFAULT_SESSION)
        .to_owned()
}

fn read_upload(body: &[u8]) -> Result<Instance, ApiError> {
    let value: serde_json::Value = wire::parse_body(body)?;
    if value.get("schema").is_some() {
        let text = std::str::from_utf8(body).map_err(|e| ApiError::bad_request(e.to_string()))?;
        return io::parse_instance(text)
            .map(|p| p.value)
            .map_err(|e| ApiError::validation(e.to_string(), Vec::new()));
    }
    let req: UploadRequest = wire::parse_body(body)?;
    match (req.instance, req.path) {
        (Some(instance), None) => Ok(instance),
        (None, Some(path)) => io::load_instance(&path).map_err(|e| {
            ApiError::validation(
                e.to_string(),
                vec![FieldError {
                    field: "path".into(),
                    message: e.to_string(),
                }],
            )
        }),
        _ => Err(ApiError::validation(
            "exactly one of `instance` or `path` is required",
            Vec::new(),
        )),
    }
}

async fn upload_instance(
    State(state): State<Shared>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<(StatusCode, Json<UploadResponse>), ApiError> {
    let instance = read_upload(&body)?;
    let violations = validate_instance(&instance);
    if !violations.is_empty() {
        return Err(ApiError::violations("instance", &violations));
    }
    let session = session(&headers);
    let (instance_ref, stored) = state.instances.insert(instance);
    state.bind_session(&session, instance_ref.clone());
    Ok((
        StatusCode::CREATED,
        Json(UploadResponse {
            session,
            instance_ref,
            n_orders: stored.orders.len(),
            n_stores: stored.stores.len(),
            warehouses: warehouse_descriptors(&stored),
        }),
    ))
}

async fn list_warehouses(
    State(state): State<Shared>,
    headers: HeaderMap,
) -> Result<Json<Vec<WarehouseDescriptor>>, ApiError> {
    let (_, instance) = state.session_instance(&session(&headers))?;
    Ok(Json(warehouse_descriptors(&instance)))
}

async fn submit_run(
    State(state): State<Shared>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<(StatusCode, Json<RunStatus>), ApiError> {
    let req: RunRequest = wire::parse_body(&body)?;
    let (instance_ref, instance) = match req.instance_ref {
        Some(hash) => {
            let instance = state.instances.get(&hash).ok_or_else(|| {
                ApiError::validation(
                    "unknown instance reference",
                    vec![FieldError {
                        field: "instance_ref".into(),
                        message: format!("no uploaded instance has hash `{hash}`"),
                    }],
                )
            })?;
            (hash, instance)
        }
        None => state.session_instance(&session(&headers))?,
    };
    let violations = validate_plan(&instance, &req.plan);
    if !violations.is_empty() {
        return Err(ApiError::violations("plan", &violations));
    }
    let status = state.create_run(instance_ref, instance, req.plan)?;
    let run_id = status.run_id.clone();
    let worker = Arc::clone(&state);
    let second_day = req.simulate_second_day;
    tokio::spawn(async move {
        let id = run_id.clone();
        let job = tokio::task::spawn_blocking(move || worker.execute(&id, second_day));
        if let Err(e) = job.await {
            log::error!("run {run_id} worker panicked: {e}");
        }
    });
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn get_run(
    State(state): State<Shared>,
    Path(id): Path<String>,
) -> Result<Json<RunStatus>, ApiError> {
    state.status(&id).map(Json)
}

async fn get_result(
    State(state): State<Shared>,
    Path(id): Path<String>,
) -> Result<Json<RunResult>, ApiError> {
    let view = state.finished(&id)?;
    let record = view.record;
    let result = record
        .day1_result
        .ok_or_else(|| ApiError::internal("finished run without a result"))?;
    Ok(Json(RunResult {
        run_id: record.run_id,
        instance_ref: record.instance_ref,
        plan: record.plan,
        result,
        kpi: record.kpi,
    }))
}

async fn get_day2(
    State(state): State<Shared>,
    Path(id): Path<String>,
) -> Result<Json<SecondDay>, ApiError> {
    let worker = Arc::clone(&state);
    let run_id = id.clone();
    let result = tokio::task::spawn_blocking(move || worker.second_day(&run_id))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(SecondDay { run_id: id, result }))
}

async fn get_export(
    State(state): State<Shared>,
    Path((id, warehouse)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let text = state.export(&id, &warehouse)?;
    let disposition = format!(
        "attachment; filename=\"{}\"",
        io::dispatch_file_name(&warehouse)
    );
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_owned()),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        text,
    )
        .into_response())
}
