//! In-memory run and instance stores with optional on-disk mirroring.
//!
//! All mutation goes through one lock per store, so writes to a run are
//! serialized while reads clone out consistent snapshots.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::io::{self, Document, IoError};
use crate::kpi::KpiReport;
use crate::model::{AllocationResult, Instance, PlanConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    pub plan: PlanConfig,
    /// Content hash of the input instance (see [`io::instance_hash`]).
    pub instance_ref: String,
    #[serde(default)]
    pub day1_result: Option<AllocationResult>,
    #[serde(default)]
    pub day2_result: Option<AllocationResult>,
    #[serde(default)]
    pub kpi: Option<KpiReport>,
}

impl Document for RunRecord {
    const SCHEMA: &'static str = "allocdss.run_record";
}

#[derive(Serialize)]
struct HashedFields<'a> {
    run_id: &'a str,
    plan: &'a PlanConfig,
    instance_ref: &'a str,
    day1_result: &'a Option<AllocationResult>,
    day2_result: &'a Option<AllocationResult>,
    kpi: &'a Option<KpiReport>,
}

impl RunRecord {
    pub fn new(run_id: String, plan: PlanConfig, instance_ref: String) -> Self {
        Self {
            run_id,
            created_at: Utc::now(),
            plan,
            instance_ref,
            day1_result: None,
            day2_result: None,
            kpi: None,
        }
    }

    /// SHA-256 of the record without its timestamp.
    pub fn content_hash(&self) -> String {
        let fields = HashedFields {
            run_id: &self.run_id,
            plan: &self.plan,
            instance_ref: &self.instance_ref,
            day1_result: &self.day1_result,
            day2_result: &self.day2_result,
            kpi: &self.kpi,
        };
        let bytes = serde_json::to_vec(&fields).expect("run records serialize");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("run `{0}` already exists")]
    DuplicateRun(String),
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

#[derive(Debug, Default)]
pub struct RunStore {
    runs: Mutex<BTreeMap<String, RunRecord>>,
    counter: AtomicU64,
    dir: Option<PathBuf>,
}

impl RunStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// A store that also writes `<run_id>.json` into `dir` on every change.
    pub fn persistent(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| IoError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self {
            dir: Some(dir),
            ..Self::default()
        })
    }

    /// A fresh id, unique within this store.
    pub fn next_id(&self) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed) + 1;
        format!("run-{n:06}")
    }

    fn persist(&self, record: &RunRecord) -> Result<(), StoreError> {
        if let Some(dir) = &self.dir {
            io::write_document(record, &dir.join(format!("{}.json", record.run_id)))?;
        }
        Ok(())
    }

    pub fn insert(&self, record: RunRecord) -> Result<(), StoreError> {
        let mut runs = lock(&self.runs);
        if runs.contains_key(&record.run_id) {
            return Err(StoreError::DuplicateRun(record.run_id));
        }
        self.persist(&record)?;
        runs.insert(record.run_id.clone(), record);
        Ok(())
    }

    pub fn get(&self, run_id: &str) -> Option<RunRecord> {
        lock(&self.runs).get(run_id).cloned()
    }

    pub fn update<F>(&self, run_id: &str, f: F) -> Result<RunRecord, StoreError>
    where
        F: FnOnce(&mut RunRecord),
    {
        let mut runs = lock(&self.runs);
        let record = runs
            .get_mut(run_id)
            .ok_or_else(|| StoreError::UnknownRun(run_id.to_owned()))?;
        f(record);
        self.persist(record)?;
        Ok(record.clone())
    }

    pub fn ids(&self) -> Vec<String> {
        lock(&self.runs).keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        lock(&self.runs).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Loads every run record found in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, StoreError> {
        let store = Self::persistent(dir)?;
        let entries = fs::read_dir(dir).map_err(|source| IoError::Io {
            path: dir.to_owned(),
            source,
        })?;
        let mut max_seq = 0;
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let record: RunRecord = io::read_document(&path)?.value;
            if let Some(n) = record
                .run_id
                .strip_prefix("run-")
                .and_then(|n| n.parse::<u64>().ok())
            {
                max_seq = max_seq.max(n);
            }
            lock(&store.runs).insert(record.run_id.clone(), record);
        }
        store.counter.store(max_seq, Ordering::Relaxed);
        Ok(store)
    }
}

/// Instances keyed by content hash; identical uploads share one entry.
#[derive(Debug, Default)]
pub struct InstanceStore {
    instances: Mutex<BTreeMap<String, Arc<Instance>>>,
}

impl InstanceStore {
    /// Stores the instance and returns its hash.
    pub fn insert(&self, instance: Instance) -> (String, Arc<Instance>) {
        let hash = io::instance_hash(&instance);
        let mut map = lock(&self.instances);
        let entry = map
            .entry(hash.clone())
            .or_insert_with(|| Arc::new(instance.canonical()));
        (hash, Arc::clone(entry))
    }

    pub fn get(&self, hash: &str) -> Option<Arc<Instance>> {
        lock(&self.instances).get(hash).cloned()
    }

    pub fn len(&self) -> usize {
        lock(&self.instances).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;

    #[test]
    fn ids_are_unique_and_duplicates_rejected() {
        let store = RunStore::in_memory();
        let a = store.next_id();
        let b = store.next_id();
        assert_ne!(a, b);
        let record = RunRecord::new(a.clone(), PlanConfig::default(), "h".into());
        store.insert(record.clone()).unwrap();
        assert!(matches!(store.insert(record), Err(StoreError::DuplicateRun(_))));
        assert!(matches!(
            store.update("nope", |_| {}),
            Err(StoreError::UnknownRun(_))
        ));
    }

    #[test]
    fn content_hash_ignores_timestamp() {
        let mut a = RunRecord::new("run-000001".into(), PlanConfig::default(), "h".into());
        let mut b = a.clone();
        b.created_at = a.created_at + chrono::Duration::hours(3);
        assert_eq!(a.content_hash(), b.content_hash());
        a.day1_result = Some(AllocationResult::default());
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn persistent_store_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::persistent(dir.path()).unwrap();
        let id = store.next_id();
        store
            .insert(RunRecord::new(id.clone(), PlanConfig::default(), "h".into()))
            .unwrap();
        store
            .update(&id, |r| r.day1_result = Some(AllocationResult::default()))
            .unwrap();
        let reloaded = RunStore::load_dir(dir.path()).unwrap();
        assert_eq!(reloaded.get(&id), store.get(&id));
        assert_ne!(reloaded.next_id(), id);
    }

    #[test]
    fn instance_uploads_deduplicate() {
        let store = InstanceStore::default();
        let inst = fixtures::small();
        let mut shuffled = inst.clone();
        shuffled.orders.reverse();
        let (h1, _) = store.insert(inst);
        let (h2, _) = store.insert(shuffled);
        assert_eq!(h1, h2);
        assert_eq!(store.len(), 1);
    }
}
