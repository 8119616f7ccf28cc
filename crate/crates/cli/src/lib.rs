//! The `allocdss` command line.
//!
//! Exit codes: 0 success, 1 input or validation error, 2 internal failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use allocdss_core::bench::{gap_benchmark, scaling_benchmark};
use allocdss_core::engine::{allocate_timed, check_feasibility, next_day_inputs};
use allocdss_core::generator::{generate, GeneratorSpec};
use allocdss_core::io::{self, write_document};
use allocdss_core::kpi::{before_after, daily_series, format_comparison_table, kpi_report};
use allocdss_core::kpi::records_from_allocation;
use allocdss_core::model::{initial_residuals, PlanConfig, RejectionReason};
use allocdss_core::oracle::SearchBudget;
use allocdss_core::rolling::{
    simulate_rolling, ArrivalOrderPolicy, DispatchPolicy, HeuristicPolicy, RollingConfig,
};

#[derive(Debug, Parser)]
#[command(name = "allocdss", version, about = "Warehouse-aware order allocation planner")]
pub struct Cli {
    /// Output style. Defaults to `table` on a terminal and `records` otherwise.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Human-readable tables.
    Table,
    /// One JSON object per line.
    Records,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BenchMode {
    Gap,
    Scaling,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic instance from a generator spec.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the spec's order count.
        #[arg(long)]
        n_orders: Option<usize>,
    },
    /// Allocate one planning day and write the result and dispatch files.
    Allocate {
        #[arg(long)]
        instance: PathBuf,
        /// Plan file; defaults to the instance's warehouse flags and ranks.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also simulate the next day on the leftover pool.
        #[arg(long)]
        second_day: bool,
    },
    /// Before/after KPI comparison over daily store records.
    Evaluate {
        #[arg(long)]
        records: PathBuf,
        /// First day of the "after" period (YYYY-MM-DD).
        #[arg(long)]
        cutoff: NaiveDate,
        #[arg(long)]
        out: PathBuf,
    },
    /// Heuristic-vs-oracle gaps or runtime scaling.
    Bench {
        #[arg(long, value_enum)]
        mode: BenchMode,
        /// Base generator spec; the order count is replaced per size or batch.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Order counts for scaling mode.
        #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000,8000,16000,32000,64000,128000,256000")]
        sizes: Vec<usize>,
        /// Timed repetitions per size (scaling mode).
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Number of seeded instances (gap mode).
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        /// Orders per instance (gap mode).
        #[arg(long, default_value_t = 15)]
        n_orders: usize,
        /// Branch-and-bound node budget per instance (gap mode).
        #[arg(long)]
        node_budget: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rolling multi-day simulation producing daily store records.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 30)]
        days: u32,
        /// Days before this one dispatch in arrival order; from it on the
        /// heuristic is used. Without it every day uses the heuristic.
        #[arg(long)]
        go_live_day: Option<u32>,
        #[arg(long, default_value_t = 0.2)]
        volatility: f64,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        /// Listen address; falls back to ALLOCDSS_ADDR, then 127.0.0.1:8080.
        #[arg(long)]
        addr: Option<String>,
        /// Mirror run records into this directory.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
}

/// A failed command, classified for the exit code.
#[derive(Debug)]
pub enum CliError {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

trait Classify<T> {
    fn input(self) -> Result<T, CliError>;
    fn internal(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Input(e.into()))
    }

    fn internal(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Internal(e.into()))
    }
}

struct Out {
    format: Format,
    text: String,
}

impl Out {
    fn line(&mut self, line: impl AsRef<str>) {
        if self.format == Format::Table {
            self.text.push_str(line.as_ref());
            self.text.push('\n');
        }
    }

    fn record<T: Serialize>(&mut self, value: &T) {
        if self.format == Format::Records {
            let json = serde_json::to_string(value).expect("records serialize");
            self.text.push_str(&json);
            self.text.push('\n');
        }
    }
}

/// Parses `args` and runs the command, returning everything it would print.
pub fn execute<I, T>(args: I) -> (ExitCode, String, String)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            return if code == 0 {
                (ExitCode::SUCCESS, text, String::new())
            } else {
                (ExitCode::from(1), String::new(), text)
            };
        }
    };
    let format = cli.format.unwrap_or(if std::io::stdout().is_terminal() {
        Format::Table
    } else {
        Format::Records
    });
    let mut out = Out {
        format,
        text: String::new(),
    };
    match run(cli.command, &mut out) {
        Ok(()) => (ExitCode::SUCCESS, out.text, String::new()),
        Err(e) => {
            let (code, err) = match &e {
                CliError::Input(err) => (e.exit_code(), format!("error: {}\n", describe(err))),
                CliError::Internal(err) => {
                    (e.exit_code(), format!("internal error: {}\n", describe(err)))
                }
            };
            (ExitCode::from(code), out.text, err)
        }
    }
}

/// The error chain joined with `: `, skipping causes already quoted by the
/// message before them.
fn describe(err: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in err.chain() {
        let part = cause.to_string();
        if !text.ends_with(&part) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&part);
        }
    }
    text
}

fn run(command: Command, out: &mut Out) -> Result<(), CliError> {
    match command {
        Command::Generate {
            spec,
            out: path,
            seed,
            n_orders,
        } => cmd_generate(&spec, &path, seed, n_orders, out),
        Command::Allocate {
            instance,
            plan,
            out: dir,
            second_day,
        } => cmd_allocate(&instance, plan.as_deref(), &dir, second_day, out),
        Command::Evaluate {
            records,
            cutoff,
            out: dir,
        } => cmd_evaluate(&records, cutoff, &dir, out),
        Command::Bench {
            mode,
            spec,
            sizes,
            reps,
            seeds,
            n_orders,
            node_budget,
            out: path,
        } => {
            let base = match &spec {
                Some(p) => io::load_generator_spec(p).input()?,
                None => match mode {
                    BenchMode::Scaling => GeneratorSpec::case_study_scale(1),
                    BenchMode::Gap => GeneratorSpec {
                        n_stores: 3,
                        n_routes: 2,
                        capacity_tightness: 0.6,
                        category_tightness: 0.6,
                        ..GeneratorSpec::default()
                    },
                },
            };
            match mode {
                BenchMode::Scaling => cmd_bench_scaling(&base, &sizes, reps, path.as_deref(), out),
                BenchMode::Gap => {
                    let base = GeneratorSpec { n_orders, ..base };
                    let budget = node_budget.map(SearchBudget::nodes).unwrap_or_default();
                    cmd_bench_gap(&base, seeds, budget, path.as_deref(), out)
                }
            }
        }
        Command::Simulate {
            spec,
            days,
            go_live_day,
            volatility,
            noise,
            out: path,
        } => cmd_simulate(&spec, days, go_live_day, volatility, noise, &path, out),
        Command::Serve { addr, run_dir } => cmd_serve(addr.as_deref(), run_dir),
    }
}

fn cmd_generate(
    spec_path: &Path,
    path: &Path,
    seed: Option<u64>,
    n_orders: Option<usize>,
    out: &mut Out,
) -> Result<(), CliError> {
    let mut spec = io::load_generator_spec(spec_path).input()?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    if let Some(n) = n_orders {
        spec.n_orders = n;
    }
    let instance = generate(&spec).input()?;
    io::save_instance(&instance, path).internal()?;
    let hash = io::instance_hash(&instance);
    out.line(format!(
        "generated {} orders, {} stores, {} warehouses -> {}",
        instance.orders.len(),
        instance.stores.len(),
        instance.warehouses.len(),
        path.display()
    ));
    out.line(format!("instance hash {hash}"));
    out.record(&serde_json::json!({
        "command": "generate",
        "out": path,
        "n_orders": instance.orders.len(),
        "n_stores": instance.stores.len(),
        "n_warehouses": instance.warehouses.len(),
        "instance_ref": hash,
    }));
    Ok(())
}

fn cmd_allocate(
    instance_path: &Path,
    plan_path: Option<&Path>,
    dir: &Path,
    second_day: bool,
    out: &mut Out,
) -> Result<(), CliError> {
    let instance = io::load_instance(instance_path).input()?;
    let plan = match plan_path {
        Some(p) => io::load_plan(p).input()?,
        None => PlanConfig::from_instance(&instance),
    };
    let residuals = initial_residuals(&instance);
    let (result, timings) = allocate_timed(&instance, &plan, &residuals).input()?;

    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .internal()?;
    io::save_result(&result, &dir.join("result.json")).internal()?;
    let exports = io::export_dispatch_files(&result, &instance, &plan, dir).internal()?;
    let date = NaiveDate::from_ymd_opt(2026, 1, 1).expect("valid date");
    let kpi = kpi_report(&records_from_allocation(&instance, &result, date)).ok();
    if let Some(kpi) = &kpi {
        write_document(kpi, &dir.join("kpi.json")).internal()?;
    }

    let violations = check_feasibility(&instance, &plan, &residuals, &result);
    let total = instance.orders.len();
    let counts = result.rejection_counts();
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;

    out.line(format!(
        "accepted {} of {} orders, volume {:.2}, objective {}",
        result.accepted.len(),
        total,
        result.accepted_volume(),
        result.objective_value
    ));
    for reason in RejectionReason::ALL {
        out.line(format!(
            "  rejected {:<22} {}",
            reason.code(),
            counts.get(&reason).copied().unwrap_or(0)
        ));
    }
    out.line(format!(
        "timing: filter {:.2} ms, sort {:.2} ms, allocate {:.2} ms, total {:.2} ms for {} orders",
        ms(timings.filter),
        ms(timings.sort),
        ms(timings.allocate),
        ms(timings.total()),
        total
    ));
    for p in &exports {
        out.line(format!("wrote {}", p.display()));
    }
    out.record(&serde_json::json!({
        "command": "allocate",
        "day": 1,
        "accepted": result.accepted.len(),
        "orders": total,
        "accepted_volume": result.accepted_volume(),
        "objective": result.objective_value,
        "rejections": counts,
        "timings": timings,
        "exports": exports,
        "kpi": kpi,
    }));
    feasibility_line(out, 1, violations.len());

    let mut failed = !violations.is_empty();
    if second_day {
        let (next, next_residuals) = next_day_inputs(&instance, &result).internal()?;
        let (day2, _) = allocate_timed(&next, &plan, &next_residuals).internal()?;
        io::save_result(&day2, &dir.join("result_day2.json")).internal()?;
        let v2 = check_feasibility(&next, &plan, &next_residuals, &day2);
        out.line(format!(
            "day 2: accepted {} of {} leftover orders, volume {:.2}",
            day2.accepted.len(),
            next.orders.len(),
            day2.accepted_volume()
        ));
        out.record(&serde_json::json!({
            "command": "allocate",
            "day": 2,
            "accepted": day2.accepted.len(),
            "orders": next.orders.len(),
            "accepted_volume": day2.accepted_volume(),
            "rejections": day2.rejection_counts(),
        }));
        feasibility_line(out, 2, v2.len());
        failed |= !v2.is_empty();
    }
    if failed {
        return Err(CliError::Internal(anyhow!(
            "allocation violates its constraints"
        )));
    }
    Ok(())
}

fn feasibility_line(out: &mut Out, day: u32, violations: usize) {
    let verdict = if violations == 0 { "PASS" } else { "FAIL" };
    out.line(format!("feasibility day {day}: {verdict} ({violations} violations)"));
    out.record(&serde_json::json!({
        "check": "feasibility",
        "day": day,
        "verdict": verdict,
        "violations": violations,
    }));
}

fn cmd_evaluate(records: &Path, cutoff: NaiveDate, dir: &Path, out: &mut Out) -> Result<(), CliError> {
    let records = io::load_daily_records(records).input()?;
    let cmp = before_after(&records, cutoff).input()?;
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .internal()?;
    write_document(&cmp, &dir.join("comparison.json")).internal()?;
    let series = daily_series(&records);
    let series_path = dir.join("daily_series.csv");
    fs::write(&series_path, io::render_daily_series(&series))
        .with_context(|| format!("writing {}", series_path.display()))
        .internal()?;
    out.line(format_comparison_table(&cmp).trim_end());
    out.record(&cmp);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).internal()?;
    text.push('\n');
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .internal()
}

fn cmd_bench_scaling(
    base: &GeneratorSpec,
    sizes: &[usize],
    reps: usize,
    path: Option<&Path>,
    out: &mut Out,
) -> Result<(), CliError> {
    if sizes.is_empty() {
        return Err(CliError::Input(anyhow!("at least one size is required")));
    }
    let report = scaling_benchmark(base, sizes, reps).input()?;
    let mut table = format!("{:>10} {:>12} {:>14} {:>10}\n", "N", "median ms", "ns/(N log2 N)", "ratio");
    for (i, row) in report.rows.iter().enumerate() {
        let ratio = match i {
            0 => "--".to_owned(),
            _ => format!("{:.2}", report.doubling_ratios[i - 1]),
        };
        let _ = writeln!(
            table,
            "{:>10} {:>12.3} {:>14.3} {:>10}",
            row.n_orders, row.median_ms, row.ns_per_n_log_n, ratio
        );
    }
    let _ = write!(
        table,
        "fit t = a N log2 N: a = {:.3} ns, R^2 = {:.4}",
        report.fitted_ns_per_n_log_n, report.r_squared
    );
    out.line(table);
    for row in &report.rows {
        out.record(row);
    }
    if let Some(p) = path {
        write_json(p, &report)?;
    }
    Ok(())
}

fn cmd_bench_gap(
    base: &GeneratorSpec,
    seeds: u64,
    budget: SearchBudget,
    path: Option<&Path>,
    out: &mut Out,
) -> Result<(), CliError> {
    let summary = gap_benchmark(base, 0..seeds, budget).input()?;
    out.line(format!(
        "{} instances, {} solved to optimality, {} with zero gap",
        summary.instances, summary.usable, summary.zero_gap
    ));
    out.line(format!(
        "mean gap {:.4}%, max gap {:.4}%",
        summary.mean_gap * 100.0,
        summary.max_gap * 100.0
    ));
    for row in &summary.rows {
        out.record(row);
    }
    if let Some(p) = path {
        write_json(p, &summary)?;
    }
    Ok(())
}

fn cmd_simulate(
    spec: &Path,
    days: u32,
    go_live_day: Option<u32>,
    volatility: f64,
    noise: f64,
    path: &Path,
    out: &mut Out,
) -> Result<(), CliError> {
    let spec = io::load_generator_spec(spec).input()?;
    let cfg = RollingConfig {
        demand_volatility: volatility,
        execution_noise: noise,
        ..RollingConfig::new(spec, days)
    };
    let fifo = ArrivalOrderPolicy;
    let heuristic = HeuristicPolicy;
    let outcome = simulate_rolling(&cfg, |day| -> &dyn DispatchPolicy {
        match go_live_day {
            Some(g) if day < g => &fifo,
            _ => &heuristic,
        }
    })
    .input()?;
    io::save_daily_records(&outcome.records, path).internal()?;
    out.line(format!(
        "{:>4} {:>10} {:>14} {:>6} {:>9} {:>8} {:>8} {:>8}",
        "day", "date", "policy", "pool", "released", "bounced", "dropped", "backlog"
    ));
    for d in &outcome.days {
        out.line(format!(
            "{:>4} {:>10} {:>14} {:>6} {:>9} {:>8} {:>8} {:>8}",
            d.day,
            d.date,
            d.policy,
            d.pool_orders,
            d.released_orders,
            d.bounced_orders,
            d.dropped_orders,
            d.backlog_after
        ));
        out.record(d);
    }
    out.line(format!(
        "wrote {} store-day records to {}",
        outcome.records.len(),
        path.display()
    ));
    Ok(())
}

fn cmd_serve(addr: Option<&str>, run_dir: Option<PathBuf>) -> Result<(), CliError> {
    let addr = allocdss_service::resolve_addr(addr)
        .map_err(|e| CliError::Input(anyhow!(e)))?;
    let state = match run_dir {
        Some(dir) => allocdss_service::AppState::persistent(dir).input()?,
        None => allocdss_service::AppState::default(),
    };
    eprintln!("allocdss service listening on {addr}");
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .internal()?;
    runtime
        .block_on(allocdss_service::serve(addr, state))
        .with_context(|| format!("serving on {addr}"))
        .internal()
}
