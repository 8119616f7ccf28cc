//! Runtime scaling and heuristic-versus-oracle gap benchmarks.
//!
//! Timings cover the allocation call only; instances are generated up front
//! and kept in memory.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::engine::{allocate_timed, EngineError};
use crate::generator::{generate, GeneratorError, GeneratorSpec};
use crate::model::{initial_residuals, PlanConfig};
use crate::oracle::{gap_report, GapReport, OracleError, SearchBudget};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("at least one repetition is required")]
    NoRepetitions,
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2.0
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_orders: usize,
    pub median_ms: f64,
    pub samples_ms: Vec<f64>,
    /// Median time over `N log2 N`, in nanoseconds.
    pub ns_per_n_log_n: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// `median(N_{k+1}) / median(N_k)` for consecutive sizes.
    pub doubling_ratios: Vec<f64>,
    /// Least-squares `t = a * N log2 N` through the origin, `a` in ns.
    pub fitted_ns_per_n_log_n: f64,
    /// Coefficient of determination of that fit.
    pub r_squared: f64,
}

fn n_log_n(n: usize) -> f64 {
    let n = n as f64;
    n * n.log2().max(1.0)
}

/// Median allocation time for one instance over `reps` runs, after one
/// untimed warm-up run.
pub fn time_allocation(spec: &GeneratorSpec, reps: usize) -> Result<(f64, Vec<f64>), BenchError> {
    if reps == 0 {
        return Err(BenchError::NoRepetitions);
    }
    let inst = generate(spec)?;
    let plan = PlanConfig::from_instance(&inst);
    let residuals = initial_residuals(&inst);
    allocate_timed(&inst, &plan, &residuals)?;
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        let (result, _) = allocate_timed(&inst, &plan, &residuals)?;
        samples.push(ms(start.elapsed()));
        drop(result);
    }
    let mut sorted = samples.clone();
    Ok((median(&mut sorted), samples))
}

/// Times allocation at each size, using `base` for everything but the order
/// count. Repetitions are interleaved across sizes, each size warmed up once.
pub fn scaling_benchmark(
    base: &GeneratorSpec,
    sizes: &[usize],
    reps: usize,
) -> Result<ScalingReport, BenchError> {
    if reps == 0 {
        return Err(BenchError::NoRepetitions);
    }
    let mut cases = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let inst = generate(&GeneratorSpec {
            n_orders: n,
            ..base.clone()
        })?;
        let plan = PlanConfig::from_instance(&inst);
        let residuals = initial_residuals(&inst);
        allocate_timed(&inst, &plan, &residuals)?;
        cases.push((inst, plan, residuals));
    }
    let mut samples = vec![Vec::with_capacity(reps); sizes.len()];
    for _ in 0..reps {
        for ((inst, plan, residuals), out) in cases.iter().zip(&mut samples) {
            let start = Instant::now();
            let (result, _) = allocate_timed(inst, plan, residuals)?;
            out.push(ms(start.elapsed()));
            drop(result);
        }
    }
    let rows: Vec<ScalingRow> = sizes
        .iter()
        .zip(samples)
        .map(|(&n, samples_ms)| {
            let median_ms = median(&mut samples_ms.clone());
            ScalingRow {
                n_orders: n,
                median_ms,
                samples_ms,
                ns_per_n_log_n: median_ms * 1e6 / n_log_n(n),
            }
        })
        .collect();
    let doubling_ratios = rows
        .windows(2)
        .map(|w| w[1].median_ms / w[0].median_ms)
        .collect();

    let xs: Vec<f64> = rows.iter().map(|r| n_log_n(r.n_orders)).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.median_ms * 1e6).collect();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let a = if sxx > 0.0 {
        xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / sxx
    } else {
        0.0
    };
    let mean_y = ys.iter().sum::<f64>() / ys.len().max(1) as f64;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - a * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    Ok(ScalingReport {
        rows,
        doubling_ratios,
        fitted_ns_per_n_log_n: a,
        r_squared,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub seed: u64,
    #[serde(flatten)]
    pub report: GapReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub instances: usize,
    /// Instances the oracle solved to proven optimality.
    pub usable: usize,
    pub mean_gap: f64,
    pub max_gap: f64,
    /// Instances where the heuristic matched the optimum.
    pub zero_gap: usize,
    pub rows: Vec<GapRow>,
}

/// Heuristic-versus-oracle gaps over `base` with each seed in `seeds`.
/// Summary statistics only count instances solved to optimality.
pub fn gap_benchmark(
    base: &GeneratorSpec,
    seeds: impl IntoIterator<Item = u64>,
    budget: SearchBudget,
) -> Result<GapSummary, BenchError> {
    let mut rows = Vec::new();
    for seed in seeds {
        let inst = generate(&GeneratorSpec {
            seed,
            ..base.clone()
        })?;
        let plan = PlanConfig::from_instance(&inst);
        let report = gap_report(&inst, &plan, &initial_residuals(&inst), budget)?;
        rows.push(GapRow { seed, report });
    }
    let gaps: Vec<f64> = rows
        .iter()
        .filter(|r| r.report.usable)
        .map(|r| r.report.relative_gap)
        .collect();
    Ok(GapSummary {
        instances: rows.len(),
        usable: gaps.len(),
        mean_gap: if gaps.is_empty() {
            0.0
        } else {
            gaps.iter().sum::<f64>() / gaps.len() as f64
        },
        max_gap: gaps.iter().copied().fold(0.0, f64::max),
        zero_gap: gaps.iter().filter(|g| **g == 0.0).count(),
        rows,
    })
}
