//! Shared service state and the run lifecycle.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Instant;

use chrono::{Days, NaiveDate};

use allocdss_core::engine::{allocate_timed, simulate_next_day};
use allocdss_core::io::render_dispatch_files;
use allocdss_core::kpi::{kpi_report, records_from_allocation, KpiReport};
use allocdss_core::model::{initial_residuals, AllocationResult, Instance, PlanConfig};
use allocdss_core::store::{InstanceStore, RunRecord, RunStore, StoreError};

use crate::error::ApiError;
use crate::wire::{RunState, RunStatus, RunTimings};

/// Session used when a request carries no session header.
pub const DEFAULT_SESSION: &str = "default";

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

/// Calendar date assigned to a planning day for KPI records.
pub fn planning_date(day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2026, 1, 1).expect("valid date") + Days::new(day.saturating_sub(1) as u64)
}

/// KPIs of one allocation over the instance's stores, if any volume was
/// requested.
pub fn run_kpi(instance: &Instance, result: &AllocationResult) -> Option<KpiReport> {
    let records = records_from_allocation(instance, result, planning_date(instance.planning_day));
    kpi_report(&records).ok()
}

struct RunEntry {
    status: RunStatus,
    instance: Arc<Instance>,
    exports: BTreeMap<String, String>,
}

/// Everything a finished run needs to answer result, day-2 and export calls.
pub struct RunView {
    pub status: RunStatus,
    pub record: RunRecord,
    pub instance: Arc<Instance>,
}

pub struct AppState {
    pub instances: InstanceStore,
    pub runs: RunStore,
    sessions: Mutex<HashMap<String, String>>,
    entries: Mutex<HashMap<String, RunEntry>>,
}

impl Default for AppState {
    fn default() -> Self {
        Self::new(RunStore::in_memory())
    }
}

impl AppState {
    pub fn new(runs: RunStore) -> Self {
        Self {
            instances: InstanceStore::default(),
            runs,
            sessions: Mutex::new(HashMap::new()),
            entries: Mutex::new(HashMap::new()),
        }
    }

    /// State whose run records are mirrored into `dir`.
    pub fn persistent(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        Ok(Self::new(RunStore::persistent(dir)?))
    }

    pub fn bind_session(&self, session: &str, instance_ref: String) {
        lock(&self.sessions).insert(session.to_owned(), instance_ref);
    }

    pub fn session_instance(&self, session: &str) -> Result<(String, Arc<Instance>), ApiError> {
        let hash = lock(&self.sessions).get(session).cloned().ok_or_else(|| {
            ApiError::conflict(
                "empty_session",
                format!("no instance loaded in session `{session}`"),
            )
        })?;
        let instance = self
            .instances
            .get(&hash)
            .ok_or_else(|| ApiError::internal(format!("instance {hash} vanished")))?;
        Ok((hash, instance))
    }

    /// Registers a pending run and returns its status.
    pub fn create_run(
        &self,
        instance_ref: String,
        instance: Arc<Instance>,
        plan: PlanConfig,
    ) -> Result<RunStatus, ApiError> {
        let run_id = self.runs.next_id();
        self.runs
            .insert(RunRecord::new(run_id.clone(), plan, instance_ref))
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let status = RunStatus {
            run_id: run_id.clone(),
            state: RunState::Pending,
            timings: None,
            error: None,
        };
        lock(&self.entries).insert(
            run_id,
            RunEntry {
                status: status.clone(),
                instance,
                exports: BTreeMap::new(),
            },
        );
        Ok(status)
    }

    pub fn status(&self, run_id: &str) -> Result<RunStatus, ApiError> {
        lock(&self.entries)
            .get(run_id)
            .map(|e| e.status.clone())
            .ok_or_else(|| unknown_run(run_id))
    }

    fn set_state(&self, run_id: &str, state: RunState) {
        if let Some(e) = lock(&self.entries).get_mut(run_id) {
            e.status.state = state;
        }
    }

    fn fail(&self, run_id: &str, message: String) {
        log::warn!("run {run_id} failed: {message}");
        if let Some(e) = lock(&self.entries).get_mut(run_id) {
            e.status.state = RunState::Failed;
            e.status.error = Some(message);
        }
    }

    /// A run that has finished successfully.
    pub fn finished(&self, run_id: &str) -> Result<RunView, ApiError> {
        let (status, instance) = {
            let entries = lock(&self.entries);
            let e = entries.get(run_id).ok_or_else(|| unknown_run(run_id))?;
            (e.status.clone(), Arc::clone(&e.instance))
        };
        match status.state {
            RunState::Done => {}
            RunState::Failed => {
                return Err(ApiError::conflict(
                    "run_failed",
                    status.error.unwrap_or_else(|| "run failed".into()),
                ))
            }
            RunState::Pending | RunState::Running => {
                return Err(ApiError::conflict(
                    "run_not_done",
                    format!("run `{run_id}` has not finished"),
                ))
            }
        }
        let record = self.runs.get(run_id).ok_or_else(|| unknown_run(run_id))?;
        Ok(RunView {
            status,
            record,
            instance,
        })
    }

    pub fn export(&self, run_id: &str, warehouse: &str) -> Result<String, ApiError> {
        self.finished(run_id)?;
        lock(&self.entries)
            .get(run_id)
            .and_then(|e| e.exports.get(warehouse).cloned())
            .ok_or_else(|| {
                ApiError::not_found(format!(
                    "run `{run_id}` has no export for warehouse `{warehouse}`"
                ))
            })
    }

    /// Executes a pending run to completion on the calling thread.
    pub fn execute(&self, run_id: &str, simulate_second_day: bool) {
        self.set_state(run_id, RunState::Running);
        let Some(record) = self.runs.get(run_id) else {
            return self.fail(run_id, "run record missing".into());
        };
        let Some(instance) = lock(&self.entries).get(run_id).map(|e| Arc::clone(&e.instance))
        else {
            return;
        };
        let plan = &record.plan;
        let (result, phases) = match allocate_timed(&instance, plan, &initial_residuals(&instance))
        {
            Ok(out) => out,
            Err(e) => return self.fail(run_id, e.to_string()),
        };

        let start = Instant::now();
        let exports: BTreeMap<String, String> = render_dispatch_files(&result, &instance, plan)
            .into_iter()
            .map(|(w, text)| (w.to_string(), text))
            .collect();
        let export_ms = start.elapsed().as_secs_f64() * 1e3;

        let day2 = if simulate_second_day {
            match simulate_next_day(&instance, plan, &result) {
                Ok(r) => Some(r),
                Err(e) => return self.fail(run_id, format!("second day: {e}")),
            }
        } else {
            None
        };
        let kpi = run_kpi(&instance, &result);
        if let Err(e) = self.runs.update(run_id, |r| {
            r.day1_result = Some(result);
            r.day2_result = day2;
            r.kpi = kpi;
        }) {
            return self.fail(run_id, e.to_string());
        }
        if let Some(e) = lock(&self.entries).get_mut(run_id) {
            e.exports = exports;
            e.status.timings = Some(RunTimings::new(phases, export_ms));
            e.status.state = RunState::Done;
        }
    }

    /// Day-2 result for a finished run, computed on first request and cached.
    pub fn second_day(&self, run_id: &str) -> Result<AllocationResult, ApiError> {
        let view = self.finished(run_id)?;
        if let Some(day2) = view.record.day2_result {
            return Ok(day2);
        }
        let day1 = view
            .record
            .day1_result
            .ok_or_else(|| ApiError::internal("finished run without a result"))?;
        let day2 = simulate_next_day(&view.instance, &view.record.plan, &day1)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let stored = self
            .runs
            .update(run_id, |r| {
                if r.day2_result.is_none() {
                    r.day2_result = Some(day2);
                }
            })
            .map_err(|e| ApiError::internal(e.to_string()))?;
        stored
            .day2_result
            .ok_or_else(|| ApiError::internal("day-2 result not stored"))
    }
}

fn unknown_run(run_id: &str) -> ApiError {
    ApiError::not_found(format!("unknown run `{run_id}`"))
}
