//! File formats.
//!
//! Structured files are pretty-printed JSON documents of the form
//! `{"schema": "...", "version": "1.0", "content": {...}}`. Readers reject a
//! missing tag, a tag for a different document kind, or an unknown major
//! version; unknown fields are reported as warnings and otherwise ignored.
//!
//! Tabular files are comma separated, UTF-8, LF line endings, with a header
//! row and `.` as the decimal separator.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::generator::GeneratorSpec;
use crate::kpi::{BeforeAfterComparison, DailyPoint, KpiReport};
use crate::model::{
    validate_instance, AllocationResult, DailyServiceRecord, Instance, PlanConfig, Rule,
    Violation, WarehouseId,
};

/// Version written into every structured document.
pub const FORMAT_VERSION: &str = "1.0";
const SUPPORTED_MAJOR: u32 = 1;

pub const DAILY_RECORDS_HEADER: &str = "date,store_id,requested,shipped,store_limit";
pub const DAILY_SERIES_HEADER: &str = "date,requested,shipped,coverage,ratio";
pub const DISPATCH_HEADER: &str = "seq,order_id,store_id,route_id,category_id,volume";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}line {line}, column {column}{}: {message}", location(.file), field_suffix(.field))]
    Parse {
        file: Option<PathBuf>,
        /// Dotted path to the offending field, empty at the document root.
        field: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{}missing `{tag}` tag", location(.file))]
    MissingTag {
        file: Option<PathBuf>,
        tag: &'static str,
    },
    #[error("{}expected a `{expected}` document, found `{found}`", location(.file))]
    WrongSchema {
        file: Option<PathBuf>,
        expected: &'static str,
        found: String,
    },
    #[error("{}unsupported format version `{found}` (supported major version {SUPPORTED_MAJOR})", location(.file))]
    UnsupportedVersion { file: Option<PathBuf>, found: String },
    #[error("{}{}", location(.file), join(.violations))]
    DanglingReference {
        file: Option<PathBuf>,
        violations: Vec<Violation>,
    },
    #[error("{}row {row}: {message}", location(.file))]
    Row {
        file: Option<PathBuf>,
        /// 1-based line number, the header being line 1.
        row: u64,
        message: String,
    },
}

fn location(file: &Option<PathBuf>) -> String {
    match file {
        Some(p) => format!("{}: ", p.display()),
        None => String::new(),
    }
}

fn field_suffix(field: &str) -> String {
    if field.is_empty() || field == "." {
        String::new()
    } else {
        format!(" (at `{field}`)")
    }
}

fn join(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl IoError {
    fn with_file(mut self, path: &Path) -> Self {
        let slot = match &mut self {
            IoError::Io { .. } => return self,
            IoError::Parse { file, .. }
            | IoError::WrongSchema { file, .. }
            | IoError::UnsupportedVersion { file, .. }
            | IoError::DanglingReference { file, .. }
            | IoError::Row { file, .. }
            | IoError::MissingTag { file, .. } => file,
        };
        *slot = Some(path.to_owned());
        self
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_owned(),
        source,
    }
}

/// A value stored as a tagged structured document.
pub trait Document: Serialize + DeserializeOwned + Clone {
    const SCHEMA: &'static str;

    /// Normalizes the value before it is written.
    fn canonicalize(&mut self) {}
}

impl Document for Instance {
    const SCHEMA: &'static str = "allocdss.instance";

    fn canonicalize(&mut self) {
        Instance::canonicalize(self);
    }
}

impl Document for PlanConfig {
    const SCHEMA: &'static str = "allocdss.plan";
}

impl Document for GeneratorSpec {
    const SCHEMA: &'static str = "allocdss.generator_spec";
}

impl Document for AllocationResult {
    const SCHEMA: &'static str = "allocdss.allocation_result";
}

impl Document for KpiReport {
    const SCHEMA: &'static str = "allocdss.kpi_report";
}

impl Document for BeforeAfterComparison {
    const SCHEMA: &'static str = "allocdss.before_after";
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    schema: &'a str,
    version: &'a str,
    content: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    #[allow(dead_code)]
    schema: String,
    #[allow(dead_code)]
    version: String,
    content: T,
}

#[derive(Deserialize)]
struct Header {
    schema: Option<String>,
    version: Option<String>,
}

/// A parsed document plus the unknown fields that were skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    /// Paths of ignored fields, e.g. `content.orders.0.colour`.
    pub warnings: Vec<String>,
}

/// Canonical document text: pretty JSON with a trailing newline.
pub fn to_document_string<T: Document>(value: &T) -> String {
    let mut value = value.clone();
    value.canonicalize();
    let envelope = Envelope {
        schema: T::SCHEMA,
        version: FORMAT_VERSION,
        content: &value,
    };
    let mut text = serde_json::to_string_pretty(&envelope).expect("documents serialize");
    text.push('\n');
    text
}

fn syntax_error(e: &serde_json::Error, field: String) -> IoError {
    IoError::Parse {
        file: None,
        field,
        line: e.line(),
        column: e.column(),
        message: strip_position(&e.to_string()),
    }
}

fn strip_position(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(i) => message[..i].to_owned(),
        None => message.to_owned(),
    }
}

fn check_version(found: &str) -> bool {
    found
        .split('.')
        .next()
        .and_then(|major| major.parse::<u32>().ok())
        .is_some_and(|major| major == SUPPORTED_MAJOR)
}

pub fn parse_document<T: Document>(text: &str) -> Result<Parsed<T>, IoError> {
    let header: Header =
        serde_json::from_str(text).map_err(|e| syntax_error(&e, String::new()))?;
    let schema = header.schema.ok_or(IoError::MissingTag {
        file: None,
        tag: "schema",
    })?;
    if schema != T::SCHEMA {
        return Err(IoError::WrongSchema {
            file: None,
            expected: T::SCHEMA,
            found: schema,
        });
    }
    let version = header.version.ok_or(IoError::MissingTag {
        file: None,
        tag: "version",
    })?;
    if !check_version(&version) {
        return Err(IoError::UnsupportedVersion {
            file: None,
            found: version,
        });
    }

    let mut warnings = Vec::new();
    let mut de = serde_json::Deserializer::from_str(text);
    let mut record = |path: serde_ignored::Path<'_>| warnings.push(path.to_string());
    let ignoring = serde_ignored::Deserializer::new(&mut de, &mut record);
    let envelope: EnvelopeIn<T> = serde_path_to_error::deserialize(ignoring)
        .map_err(|e| syntax_error(e.inner(), e.path().to_string()))?;
    de.end().map_err(|e| syntax_error(&e, String::new()))?;
    Ok(Parsed {
        value: envelope.content,
        warnings,
    })
}

pub fn read_document<T: Document>(path: &Path) -> Result<Parsed<T>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parsed = parse_document(&text).map_err(|e| e.with_file(path))?;
    for w in &parsed.warnings {
        log::warn!("{}: ignoring unknown field `{w}`", path.display());
    }
    Ok(parsed)
}

pub fn write_document<T: Document>(value: &T, path: &Path) -> Result<(), IoError> {
    fs::write(path, to_document_string(value)).map_err(io_err(path))
}

fn dangling_references(instance: &Instance) -> Vec<Violation> {
    validate_instance(instance)
        .into_iter()
        .filter(|v| v.rule == Rule::DanglingReference)
        .collect()
}

/// Parses an instance document and rejects references to missing entities.
/// Other invariant violations are left to [`validate_instance`].
pub fn parse_instance(text: &str) -> Result<Parsed<Instance>, IoError> {
    let parsed: Parsed<Instance> = parse_document(text)?;
    let violations = dangling_references(&parsed.value);
    if !violations.is_empty() {
        return Err(IoError::DanglingReference {
            file: None,
            violations,
        });
    }
    Ok(parsed)
}

pub fn load_instance_with_warnings(path: &Path) -> Result<Parsed<Instance>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parsed = parse_instance(&text).map_err(|e| e.with_file(path))?;
    for w in &parsed.warnings {
        log::warn!("{}: ignoring unknown field `{w}`", path.display());
    }
    Ok(parsed)
}

pub fn load_instance(path: &Path) -> Result<Instance, IoError> {
    load_instance_with_warnings(path).map(|p| p.value)
}

pub fn save_instance(instance: &Instance, path: &Path) -> Result<(), IoError> {
    write_document(instance, path)
}

pub fn load_plan(path: &Path) -> Result<PlanConfig, IoError> {
    read_document(path).map(|p| p.value)
}

pub fn save_plan(plan: &PlanConfig, path: &Path) -> Result<(), IoError> {
    write_document(plan, path)
}

pub fn load_generator_spec(path: &Path) -> Result<GeneratorSpec, IoError> {
    read_document(path).map(|p| p.value)
}

pub fn save_generator_spec(spec: &GeneratorSpec, path: &Path) -> Result<(), IoError> {
    write_document(spec, path)
}

pub fn load_result(path: &Path) -> Result<AllocationResult, IoError> {
    read_document(path).map(|p| p.value)
}

pub fn save_result(result: &AllocationResult, path: &Path) -> Result<(), IoError> {
    write_document(result, path)
}

/// SHA-256 (lowercase hex) of the compact canonical serialization. Equal
/// for instances that differ only in collection or field order.
pub fn instance_hash(instance: &Instance) -> String {
    let canonical = instance.clone().canonical();
    let bytes = serde_json::to_vec(&canonical).expect("instances serialize");
    hex::encode(Sha256::digest(&bytes))
}

fn csv_row_error(e: &csv::Error) -> IoError {
    let row = e.position().map(|p| p.line()).unwrap_or(0);
    let message = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => match err.field() {
            Some(i) => format!(
                "column `{}`: {}",
                DAILY_RECORDS_HEADER.split(',').nth(i as usize).unwrap_or("?"),
                err.kind()
            ),
            None => err.kind().to_string(),
        },
        _ => e.to_string(),
    };
    IoError::Row {
        file: None,
        row,
        message,
    }
}

pub fn parse_daily_records(text: &str) -> Result<Vec<DailyServiceRecord>, IoError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_row_error(&e))?.clone();
    let expected: Vec<&str> = DAILY_RECORDS_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(IoError::Row {
            file: None,
            row: 1,
            message: format!("expected header `{DAILY_RECORDS_HEADER}`"),
        });
    }
    let mut records = Vec::new();
    for row in reader.deserialize::<DailyServiceRecord>() {
        let record = row.map_err(|e| csv_row_error(&e))?;
        let line = records.len() as u64 + 2;
        for (name, value) in [
            ("requested", record.requested),
            ("shipped", record.shipped),
            ("store_limit", record.store_limit),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(IoError::Row {
                    file: None,
                    row: line,
                    message: format!("column `{name}` must be a non-negative number, got {value}"),
                });
            }
        }
        records.push(record);
    }
    Ok(records)
}

pub fn render_daily_records(records: &[DailyServiceRecord]) -> String {
    let mut out = String::with_capacity(48 * (records.len() + 1));
    out.push_str(DAILY_RECORDS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.date, r.store_id, r.requested, r.shipped, r.store_limit
        );
    }
    out
}

pub fn load_daily_records(path: &Path) -> Result<Vec<DailyServiceRecord>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_daily_records(&text).map_err(|e| e.with_file(path))
}

pub fn save_daily_records(records: &[DailyServiceRecord], path: &Path) -> Result<(), IoError> {
    fs::write(path, render_daily_records(records)).map_err(io_err(path))
}

/// Daily network series; undefined ratios are left blank.
pub fn render_daily_series(series: &[DailyPoint]) -> String {
    let mut out = String::from(DAILY_SERIES_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in series {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.date,
            p.requested,
            p.shipped,
            opt(p.coverage),
            opt(p.ratio)
        );
    }
    out
}

fn round_micro(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Dispatch file name for a warehouse.
pub fn dispatch_file_name(warehouse: &str) -> String {
    format!("dispatch_{warehouse}.csv")
}

/// Dispatch file contents for one warehouse: its accepted orders in
/// acceptance sequence, then a `total` footer.
pub fn render_dispatch(result: &AllocationResult, instance: &Instance, warehouse: &str) -> String {
    let index = instance.index();
    let mut out = String::from(DISPATCH_HEADER);
    out.push('\n');
    let mut total = 0.0;
    let mut seq = 0;
    for id in &result.accepted {
        let Some(order) = index.orders.get(id.as_str()) else {
            continue;
        };
        if order.warehouse_id.as_str() != warehouse {
            continue;
        }
        seq += 1;
        total += order.volume;
        let route = index
            .stores
            .get(order.store_id.as_str())
            .map(|s| s.route_id.as_str())
            .unwrap_or("");
        let _ = writeln!(
            out,
            "{seq},{},{},{route},{},{}",
            order.id, order.store_id, order.category_id, order.volume
        );
    }
    let _ = writeln!(out, "total,,,,,{}", round_micro(total));
    out
}

/// One dispatch file per active warehouse, in warehouse id order.
pub fn render_dispatch_files(
    result: &AllocationResult,
    instance: &Instance,
    plan: &PlanConfig,
) -> Vec<(WarehouseId, String)> {
    plan.active_warehouses()
        .map(|w| (w.clone(), render_dispatch(result, instance, w.as_str())))
        .collect()
}

pub fn export_dispatch_files(
    result: &AllocationResult,
    instance: &Instance,
    plan: &PlanConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, IoError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut paths = Vec::new();
    for (warehouse, text) in render_dispatch_files(result, instance, plan) {
        let path = out_dir.join(dispatch_file_name(warehouse.as_str()));
        fs::write(&path, text).map_err(io_err(&path))?;
        paths.push(path);
    }
    Ok(paths)
}
