//! Service and compliance metrics over store-day records, before/after
//! comparison around a go-live date, and the Mann-Whitney U test.
//!
//! Pooled metrics are volume weighted: `sum S / sum R` rather than a mean of
//! per-day ratios. The per-day series is exposed separately and is what the
//! significance test runs on.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::model::{AllocationResult, DailyServiceRecord, Instance};

/// Largest smaller-sample size for which p-values come from the exact
/// permutation distribution.
pub const EXACT_P_MAX_SAMPLE: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum KpiError {
    #[error("total requested volume is zero; {0} is undefined")]
    ZeroRequested(&'static str),
    #[error("no records to evaluate")]
    Empty,
    #[error("sample {0} is empty")]
    EmptySample(&'static str),
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("no records {0} the cutoff {1}")]
    EmptySide(&'static str, NaiveDate),
}

/// `sum S / sum R`. May exceed 1 when backlog ships.
pub fn ship_order_ratio(records: &[DailyServiceRecord]) -> Result<f64, KpiError> {
    let requested: f64 = records.iter().map(|r| r.requested).sum();
    if requested <= 0.0 {
        return Err(KpiError::ZeroRequested("ship/order ratio"));
    }
    Ok(records.iter().map(|r| r.shipped).sum::<f64>() / requested)
}

/// `sum min(S, R) / sum R`, always within [0, 1].
pub fn same_day_coverage(records: &[DailyServiceRecord]) -> Result<f64, KpiError> {
    let requested: f64 = records.iter().map(|r| r.requested).sum();
    if requested <= 0.0 {
        return Err(KpiError::ZeroRequested("same-day coverage"));
    }
    Ok(records
        .iter()
        .map(|r| r.shipped.min(r.requested))
        .sum::<f64>()
        / requested)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplianceShares {
    /// Share of store-days with `R > limit`.
    pub order_over_limit: f64,
    /// Share of store-days with `S > limit`.
    pub ship_over_limit: f64,
    /// Share of store-days with `S >= R`.
    pub full_fulfillment: f64,
    /// Mean over calendar days of `sum_stores max(0, R - S)`.
    pub avg_daily_unserved: f64,
}

pub fn compliance_shares(records: &[DailyServiceRecord]) -> Result<ComplianceShares, KpiError> {
    if records.is_empty() {
        return Err(KpiError::Empty);
    }
    let n = records.len() as f64;
    let count = |pred: &dyn Fn(&DailyServiceRecord) -> bool| {
        records.iter().filter(|r| pred(r)).count() as f64 / n
    };
    let mut unserved: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    for r in records {
        *unserved.entry(r.date).or_insert(0.0) += (r.requested - r.shipped).max(0.0);
    }
    Ok(ComplianceShares {
        order_over_limit: count(&|r| r.requested > r.store_limit),
        ship_over_limit: count(&|r| r.shipped > r.store_limit),
        full_fulfillment: count(&|r| r.shipped.min(r.requested) == r.requested),
        avg_daily_unserved: unserved.values().sum::<f64>() / unserved.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpiReport {
    pub ship_order_ratio: f64,
    pub same_day_coverage: f64,
    pub avg_daily_unserved: f64,
    pub share_order_over_limit: f64,
    pub share_ship_over_limit: f64,
    pub share_full_fulfillment: f64,
    pub n_days: usize,
    pub n_store_days: usize,
}

pub fn kpi_report(records: &[DailyServiceRecord]) -> Result<KpiReport, KpiError> {
    let shares = compliance_shares(records)?;
    let n_days = records
        .iter()
        .map(|r| r.date)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    Ok(KpiReport {
        ship_order_ratio: ship_order_ratio(records)?,
        same_day_coverage: same_day_coverage(records)?,
        avg_daily_unserved: shares.avg_daily_unserved,
        share_order_over_limit: shares.order_over_limit,
        share_ship_over_limit: shares.ship_over_limit,
        share_full_fulfillment: shares.full_fulfillment,
        n_days,
        n_store_days: records.len(),
    })
}

/// One record per store for a single planning run: requested is the store's
/// pending volume, shipped its accepted load, the limit its base capacity.
pub fn records_from_allocation(
    instance: &Instance,
    result: &AllocationResult,
    date: NaiveDate,
) -> Vec<DailyServiceRecord> {
    let mut requested: BTreeMap<&str, f64> = BTreeMap::new();
    for o in &instance.orders {
        *requested.entry(o.store_id.as_str()).or_insert(0.0) += o.volume;
    }
    let mut stores: Vec<_> = instance.stores.iter().collect();
    stores.sort_by(|a, b| a.id.cmp(&b.id));
    stores
        .into_iter()
        .map(|s| DailyServiceRecord {
            date,
            store_id: s.id.clone(),
            requested: requested.get(s.id.as_str()).copied().unwrap_or(0.0),
            shipped: result.store_loads.get(&s.id).copied().unwrap_or(0.0),
            store_limit: s.base_capacity,
        })
        .collect()
}

/// Network totals for one calendar day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyPoint {
    pub date: NaiveDate,
    pub requested: f64,
    pub shipped: f64,
    /// `None` on days with nothing requested.
    pub coverage: Option<f64>,
    pub ratio: Option<f64>,
}

pub fn daily_series(records: &[DailyServiceRecord]) -> Vec<DailyPoint> {
    let mut days: BTreeMap<NaiveDate, (f64, f64, f64)> = BTreeMap::new();
    for r in records {
        let e = days.entry(r.date).or_insert((0.0, 0.0, 0.0));
        e.0 += r.requested;
        e.1 += r.shipped;
        e.2 += r.shipped.min(r.requested);
    }
    days.into_iter()
        .map(|(date, (requested, shipped, covered))| DailyPoint {
            date,
            requested,
            shipped,
            coverage: (requested > 0.0).then(|| covered / requested),
            ratio: (requested > 0.0).then(|| shipped / requested),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `U` of the first sample: its rank sum minus `n_a (n_a + 1) / 2`.
    pub u: f64,
    pub p_value: f64,
    pub method: PValueMethod,
}

/// Midranks (1-based, ties averaged) of the pooled samples.
fn pooled_midranks(a: &[f64], b: &[f64]) -> Result<Vec<f64>, KpiError> {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    if pooled.iter().any(|x| !x.is_finite()) {
        return Err(KpiError::NonFinite);
    }
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && pooled[idx[end]] == pooled[idx[start]] {
            end += 1;
        }
        let midrank = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = midrank;
        }
        start = end;
    }
    Ok(ranks)
}

fn check_samples(a: &[f64], b: &[f64]) -> Result<(), KpiError> {
    if a.is_empty() {
        return Err(KpiError::EmptySample("a"));
    }
    if b.is_empty() {
        return Err(KpiError::EmptySample("b"));
    }
    Ok(())
}

fn u_statistic(ranks: &[f64], n_a: usize) -> f64 {
    let rank_sum: f64 = ranks[..n_a].iter().sum();
    rank_sum - (n_a * (n_a + 1)) as f64 / 2.0
}

/// Two-sided p-value from the permutation distribution of the rank sum over
/// all `C(n_a + n_b, n_a)` labelings, ties kept as midranks.
pub fn exact_p_value(a: &[f64], b: &[f64]) -> Result<f64, KpiError> {
    check_samples(a, b)?;
    let ranks = pooled_midranks(a, b)?;
    let n = ranks.len();
    // Count over the smaller side; |T - mean| is symmetric under the swap.
    let (k, chosen) = if a.len() <= b.len() {
        (a.len(), &ranks[..a.len()])
    } else {
        (b.len(), &ranks[a.len()..])
    };
    // Doubled midranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let observed: i64 = chosen.iter().map(|r| (2.0 * r).round() as i64).sum();
    let mean = (k * (n + 1)) as i64;
    let distance = (observed - mean).abs();

    let max_sum: usize = {
        let mut d = doubled.clone();
        d.sort_unstable_by(|x, y| y.cmp(x));
        d[..k].iter().sum()
    };
    // ways[j][s]: labelings choosing j items with doubled rank sum s.
    let mut ways = vec![vec![0.0f64; max_sum + 1]; k + 1];
    ways[0][0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        reach = (reach + r).min(max_sum);
        for j in (1..=k).rev() {
            let (lower, upper) = ways.split_at_mut(j);
            let from = &lower[j - 1];
            let to = &mut upper[0];
            for s in (r..=reach).rev() {
                to[s] += from[s - r];
            }
        }
    }
    let total: f64 = ways[k].iter().sum();
    let extreme: f64 = ways[k]
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as i64 - mean).abs() >= distance)
        .map(|(_, w)| w)
        .sum();
    Ok((extreme / total).min(1.0))
}

/// Two-sided p-value from the normal approximation with tie-corrected
/// variance and a 0.5 continuity correction.
pub fn normal_p_value(a: &[f64], b: &[f64]) -> Result<f64, KpiError> {
    check_samples(a, b)?;
    let ranks = pooled_midranks(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let u = u_statistic(&ranks, a.len());

    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let variance = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if !(variance > 0.0) {
        return Ok(1.0);
    }
    let z = ((u - na * nb / 2.0).abs() - 0.5) / variance.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok((2.0 * normal.sf(z)).clamp(0.0, 1.0))
}

/// Rank-sum test. Exact p-values when the smaller sample has at most
/// [`EXACT_P_MAX_SAMPLE`] values, normal approximation otherwise.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, KpiError> {
    check_samples(a, b)?;
    let ranks = pooled_midranks(a, b)?;
    let u = u_statistic(&ranks, a.len());
    let (p_value, method) = if a.len().min(b.len()) <= EXACT_P_MAX_SAMPLE {
        (exact_p_value(a, b)?, PValueMethod::Exact)
    } else {
        (normal_p_value(a, b)?, PValueMethod::Normal)
    };
    Ok(MannWhitney { u, p_value, method })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaUnit {
    /// `(after - before) * 100` for ratios and shares.
    PercentagePoints,
    /// `(after - before) / before * 100`.
    PercentChange,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ShipOrderRatio,
    SameDayCoverage,
    AvgDailyUnserved,
    OrderOverLimit,
    ShipOverLimit,
    FullFulfillment,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::ShipOrderRatio,
        Metric::SameDayCoverage,
        Metric::AvgDailyUnserved,
        Metric::OrderOverLimit,
        Metric::ShipOverLimit,
        Metric::FullFulfillment,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::ShipOrderRatio => "Weighted Ship/Order Ratio",
            Metric::SameDayCoverage => "Weighted Same-Day Coverage",
            Metric::AvgDailyUnserved => "Average Daily Unserved Batch",
            Metric::OrderOverLimit => "Store-days with Order > Limit",
            Metric::ShipOverLimit => "Store-days with Ship > Limit",
            Metric::FullFulfillment => "Store-days with Full Fulfillment",
        }
    }

    pub fn unit(self) -> DeltaUnit {
        match self {
            Metric::ShipOrderRatio | Metric::SameDayCoverage | Metric::FullFulfillment => {
                DeltaUnit::PercentagePoints
            }
            Metric::AvgDailyUnserved | Metric::OrderOverLimit | Metric::ShipOverLimit => {
                DeltaUnit::PercentChange
            }
        }
    }

    pub fn value(self, report: &KpiReport) -> f64 {
        match self {
            Metric::ShipOrderRatio => report.ship_order_ratio,
            Metric::SameDayCoverage => report.same_day_coverage,
            Metric::AvgDailyUnserved => report.avg_daily_unserved,
            Metric::OrderOverLimit => report.share_order_over_limit,
            Metric::ShipOverLimit => report.share_ship_over_limit,
            Metric::FullFulfillment => report.share_full_fulfillment,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: Metric,
    pub before: f64,
    pub after: f64,
    /// `None` for a percent change from a zero baseline.
    pub delta: Option<f64>,
    pub unit: DeltaUnit,
}

pub fn metric_delta(metric: Metric, before: &KpiReport, after: &KpiReport) -> MetricDelta {
    let (b, a) = (metric.value(before), metric.value(after));
    let unit = metric.unit();
    let delta = match unit {
        DeltaUnit::PercentagePoints => Some((a - b) * 100.0),
        DeltaUnit::PercentChange => (b != 0.0).then(|| (a - b) / b * 100.0),
    };
    MetricDelta {
        metric,
        before: b,
        after: a,
        delta,
        unit,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeforeAfterComparison {
    pub cutoff: NaiveDate,
    pub before: KpiReport,
    pub after: KpiReport,
    pub deltas: Vec<MetricDelta>,
    /// Test on daily same-day coverage, after versus before.
    pub mannwhitney_u: f64,
    pub p_value_two_sided: f64,
    pub p_value_method: PValueMethod,
}

/// Splits at `cutoff` (before: strictly earlier; after: on or later).
pub fn before_after(
    records: &[DailyServiceRecord],
    cutoff: NaiveDate,
) -> Result<BeforeAfterComparison, KpiError> {
    let (before, after): (Vec<_>, Vec<_>) =
        records.iter().cloned().partition(|r| r.date < cutoff);
    if before.is_empty() {
        return Err(KpiError::EmptySide("before", cutoff));
    }
    if after.is_empty() {
        return Err(KpiError::EmptySide("on or after", cutoff));
    }
    let before_report = kpi_report(&before)?;
    let after_report = kpi_report(&after)?;
    let coverage = |rs: &[DailyServiceRecord]| -> Vec<f64> {
        daily_series(rs).into_iter().filter_map(|p| p.coverage).collect()
    };
    let test = mann_whitney_u(&coverage(&after), &coverage(&before))?;
    let deltas = Metric::ALL
        .iter()
        .map(|m| metric_delta(*m, &before_report, &after_report))
        .collect();
    Ok(BeforeAfterComparison {
        cutoff,
        before: before_report,
        after: after_report,
        deltas,
        mannwhitney_u: test.u,
        p_value_two_sided: test.p_value,
        p_value_method: test.method,
    })
}

/// Human-readable comparison table. Ratios and shares print as percentages.
pub fn format_comparison_table(cmp: &BeforeAfterComparison) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Before/after KPI comparison (cutoff {})", cmp.cutoff);
    let _ = writeln!(out, "{:<34} {:>12} {:>12} {:>12}", "Metric", "Before", "After", "Delta");
    let _ = writeln!(
        out,
        "{:<34} {:>12} {:>12} {:>12}",
        "Analysis horizon (days)", cmp.before.n_days, cmp.after.n_days, "--"
    );
    for d in &cmp.deltas {
        let fmt_value = |v: f64| match d.metric {
            Metric::AvgDailyUnserved => format!("{v:.1}"),
            _ => format!("{:.2}%", v * 100.0),
        };
        let delta = match (d.delta, d.unit) {
            (Some(x), DeltaUnit::PercentagePoints) => format!("{x:+.1} pp"),
            (Some(x), DeltaUnit::PercentChange) => format!("{x:+.1}%"),
            (None, _) => "n/a".to_owned(),
        };
        let _ = writeln!(
            out,
            "{:<34} {:>12} {:>12} {:>12}",
            d.metric.label(),
            fmt_value(d.before),
            fmt_value(d.after),
            delta
        );
    }
    let _ = writeln!(
        out,
        "Mann-Whitney U on daily coverage: U = {:.1}, p = {:.3e} ({:?})",
        cmp.mannwhitney_u, cmp.p_value_two_sided, cmp.p_value_method
    );
    out
}
