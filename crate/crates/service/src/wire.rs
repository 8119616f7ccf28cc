//! Request and response bodies. Field names match the file formats.

use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use allocdss_core::engine::PhaseTimings;
use allocdss_core::kpi::KpiReport;
use allocdss_core::model::{AllocationResult, Instance, PlanConfig, Warehouse};

use crate::error::{ApiError, FieldError};

/// Body of `POST /instance`: an inline instance or a path readable by the
/// server. A full instance document (`{"schema", "version", "content"}`) is
/// also accepted.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UploadRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<Instance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UploadResponse {
    pub session: String,
    pub instance_ref: String,
    pub n_orders: usize,
    pub n_stores: usize,
    pub warehouses: Vec<WarehouseDescriptor>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarehouseDescriptor {
    pub id: String,
    pub label: String,
    pub active: bool,
    pub rank: u32,
}

impl From<&Warehouse> for WarehouseDescriptor {
    fn from(w: &Warehouse) -> Self {
        Self {
            id: w.id.to_string(),
            label: w.role_label(),
            active: w.active,
            rank: w.rank,
        }
    }
}

/// Descriptors in rank order, ties by id.
pub fn warehouse_descriptors(instance: &Instance) -> Vec<WarehouseDescriptor> {
    let mut out: Vec<WarehouseDescriptor> = instance.warehouses.iter().map(Into::into).collect();
    out.sort_by(|a, b| a.rank.cmp(&b.rank).then_with(|| a.id.cmp(&b.id)));
    out
}

/// Body of `POST /runs`. Without `instance_ref` the session's instance is used.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_ref: Option<String>,
    pub plan: PlanConfig,
    #[serde(default)]
    pub simulate_second_day: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Pending,
    Running,
    Done,
    Failed,
}

/// Phase wall times in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTimings {
    pub filter_ms: f64,
    pub sort_ms: f64,
    pub allocate_ms: f64,
    pub export_ms: f64,
}

impl RunTimings {
    pub fn new(phases: PhaseTimings, export_ms: f64) -> Self {
        let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
        Self {
            filter_ms: ms(phases.filter),
            sort_ms: ms(phases.sort),
            allocate_ms: ms(phases.allocate),
            export_ms,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub state: RunState,
    #[serde(default)]
    pub timings: Option<RunTimings>,
    #[serde(default)]
    pub error: Option<String>,
}

/// Body of `GET /runs/{id}/result`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub instance_ref: String,
    pub plan: PlanConfig,
    pub result: AllocationResult,
    /// Absent when the instance has no pending volume.
    pub kpi: Option<KpiReport>,
}

/// Body of `GET /runs/{id}/day2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondDay {
    pub run_id: String,
    pub result: AllocationResult,
}

/// Parses a JSON body. Syntax errors are 400; type and shape errors are 422
/// and name the offending field.
pub fn parse_body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        if inner.classify() == serde_json::error::Category::Data {
            ApiError::validation(
                inner.to_string(),
                vec![FieldError {
                    field,
                    message: inner.to_string(),
                }],
            )
        } else {
            ApiError::bad_request(format!("malformed JSON: {inner}"))
        }
    })?;
    de.end()
        .map_err(|e| ApiError::bad_request(format!("malformed JSON: {e}")))?;
    Ok(value)
}
