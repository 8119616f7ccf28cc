//! Seeded synthetic planning cycles.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`), whose output
//! stream is fixed by its published specification and identical on every
//! platform. Each generated quantity is drawn in a fixed sequence so that a
//! spec maps to exactly one instance.
//!
//! Capacities are derived from demand: a store's base capacity is
//! `ceil(capacity_tightness * volume destined to it)`, so the network-wide
//! total matches `capacity_tightness * total volume` up to one unit per store.
//! A constrained category's route limit is `category_tightness` times its
//! largest per-route volume; values at or above 1 never bind.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Category, CategoryId, Instance, Order, Route, Store, Warehouse, WarehouseId,
};

/// Role labels given to the first three warehouses of a generated network.
pub const ROLE_LABELS: [&str; 3] = [
    "Warehouse-Primary",
    "Warehouse-Auxiliary",
    "Warehouse-InnerProducts",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VolumeDistribution {
    Uniform { lo: f64, hi: f64 },
    Lognormal { mu: f64, sigma: f64 },
}

impl VolumeDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            VolumeDistribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            VolumeDistribution::Lognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
        }
    }
}

fn default_flow_through() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n_orders: usize,
    pub n_stores: usize,
    pub n_routes: usize,
    pub n_categories: usize,
    pub n_warehouses: usize,
    pub constrained_category_fraction: f64,
    /// Total base capacity over total order volume.
    pub capacity_tightness: f64,
    /// Route limit over the category's largest per-route volume.
    pub category_tightness: f64,
    pub eligibility_density: f64,
    pub volume_distribution: VolumeDistribution,
    /// Priorities are drawn uniformly from `1..=priority_levels`.
    pub priority_levels: u32,
    /// Flow-through deduction as a share of base capacity.
    #[serde(default = "default_flow_through")]
    pub flow_through_fraction: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            n_orders: 100,
            n_stores: 10,
            n_routes: 3,
            n_categories: 4,
            n_warehouses: 3,
            constrained_category_fraction: 0.5,
            capacity_tightness: 0.8,
            category_tightness: 0.8,
            eligibility_density: 0.9,
            volume_distribution: VolumeDistribution::Uniform { lo: 1.0, hi: 20.0 },
            priority_levels: 3,
            flow_through_fraction: 0.1,
        }
    }
}

impl GeneratorSpec {
    /// The network size reported in the case study: 212,278 order lines,
    /// 772 stores, three outbound warehouses.
    pub fn case_study_scale(seed: u64) -> Self {
        Self {
            seed,
            n_orders: 212_278,
            n_stores: 772,
            n_routes: 40,
            n_categories: 8,
            n_warehouses: 3,
            capacity_tightness: 0.7,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |msg: &str| Err(GeneratorError::InvalidSpec(msg.to_owned()));
        if self.n_orders == 0
            || self.n_stores == 0
            || self.n_routes == 0
            || self.n_categories == 0
            || self.n_warehouses == 0
        {
            return bad("all counts must be positive");
        }
        if self.n_routes > self.n_stores {
            return bad("n_routes must not exceed n_stores");
        }
        for (name, v) in [
            ("constrained_category_fraction", self.constrained_category_fraction),
            ("eligibility_density", self.eligibility_density),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.flow_through_fraction) {
            return bad("flow_through_fraction must lie in [0, 1)");
        }
        for (name, v) in [
            ("capacity_tightness", self.capacity_tightness),
            ("category_tightness", self.category_tightness),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if self.priority_levels == 0 {
            return bad("priority_levels must be at least 1");
        }
        match self.volume_distribution {
            VolumeDistribution::Uniform { lo, hi } if !(lo > 0.0 && hi >= lo && hi.is_finite()) => {
                bad("uniform volumes need 0 < lo <= hi")
            }
            VolumeDistribution::Lognormal { mu, sigma } if !(mu.is_finite() && sigma >= 0.0) => {
                bad("lognormal volumes need finite mu and sigma >= 0")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GeneratorError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

enum VolumeSampler {
    Uniform(Uniform<f64>),
    Lognormal(LogNormal<f64>),
}

impl VolumeSampler {
    fn new(dist: VolumeDistribution) -> Self {
        match dist {
            VolumeDistribution::Uniform { lo, hi } => {
                VolumeSampler::Uniform(Uniform::new_inclusive(lo, hi).expect("validated bounds"))
            }
            VolumeDistribution::Lognormal { mu, sigma } => {
                VolumeSampler::Lognormal(LogNormal::new(mu, sigma).expect("validated parameters"))
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            VolumeSampler::Uniform(d) => d.sample(rng),
            VolumeSampler::Lognormal(d) => d.sample(rng),
        }
    }
}

fn order_id(day: u32, seq: usize) -> String {
    if day <= 1 {
        format!("o{seq:06}")
    } else {
        format!("d{day:03}-o{seq:06}")
    }
}

/// Draws one day's orders. Volumes are rounded to 0.01 and never below it.
fn draw_orders(spec: &GeneratorSpec, day: u32, rng: &mut ChaCha8Rng) -> Vec<Order> {
    let sampler = VolumeSampler::new(spec.volume_distribution);
    (0..spec.n_orders)
        .map(|seq| {
            let store = rng.random_range(0..spec.n_stores);
            let warehouse = rng.random_range(0..spec.n_warehouses);
            let category = rng.random_range(0..spec.n_categories);
            let volume = round2(sampler.sample(rng)).max(0.01);
            let priority = rng.random_range(1..=spec.priority_levels) as f64;
            Order {
                id: order_id(day, seq + 1).into(),
                store_id: store_id(store).into(),
                warehouse_id: warehouse_id(warehouse).into(),
                category_id: category_id(category).into(),
                volume,
                priority,
            }
        })
        .collect()
}

fn store_id(i: usize) -> String {
    format!("s{:04}", i + 1)
}

fn route_id(i: usize) -> String {
    format!("r{:03}", i + 1)
}

fn category_id(i: usize) -> String {
    format!("c{:02}", i + 1)
}

fn warehouse_id(i: usize) -> String {
    format!("w{}", i + 1)
}

/// Generates one planning cycle (day 1).
pub fn generate(spec: &GeneratorSpec) -> Result<Instance, GeneratorError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let warehouses = (0..spec.n_warehouses)
        .map(|i| Warehouse {
            id: warehouse_id(i).into(),
            label: (spec.n_warehouses == ROLE_LABELS.len()).then(|| ROLE_LABELS[i].to_owned()),
            active: true,
            rank: i as u32 + 1,
        })
        .collect();
    let routes: Vec<Route> = (0..spec.n_routes)
        .map(|i| Route {
            id: route_id(i).into(),
        })
        .collect();

    let n_constrained =
        (spec.constrained_category_fraction * spec.n_categories as f64).round() as usize;

    let eligibility: Vec<BTreeMap<CategoryId, bool>> = (0..spec.n_stores)
        .map(|_| {
            (0..spec.n_categories)
                .map(|p| (category_id(p).into(), rng.random_bool(spec.eligibility_density)))
                .collect()
        })
        .collect();

    let orders = draw_orders(spec, 1, &mut rng);

    let mut store_demand = vec![0.0; spec.n_stores];
    let mut route_category = vec![vec![0.0; spec.n_categories]; spec.n_routes];
    for o in &orders {
        let s = parse_index(o.store_id.as_str());
        let p = parse_index(o.category_id.as_str());
        store_demand[s] += o.volume;
        route_category[s % spec.n_routes][p] += o.volume;
    }

    let categories = (0..spec.n_categories)
        .map(|p| {
            let constrained = p < n_constrained;
            let peak = route_category.iter().map(|r| r[p]).fold(0.0, f64::max);
            Category {
                id: category_id(p).into(),
                constrained,
                route_limit: constrained.then(|| round2(spec.category_tightness * peak)),
            }
        })
        .collect();

    let stores = eligibility
        .into_iter()
        .enumerate()
        .map(|(s, eligibility)| {
            let base = (spec.capacity_tightness * store_demand[s]).ceil();
            Store {
                id: store_id(s).into(),
                route_id: route_id(s % spec.n_routes).into(),
                base_capacity: base,
                flow_through_deduction: round2(spec.flow_through_fraction * base),
                eligibility,
            }
        })
        .collect();

    Ok(Instance {
        planning_day: 1,
        warehouses,
        routes,
        categories,
        stores,
        orders,
    })
}

/// Zero-based index from a generated id such as `s0042`.
fn parse_index(id: &str) -> usize {
    id[1..].parse::<usize>().expect("generated id") - 1
}

/// A rolling series of planning cycles over a fixed network. Day 1 is
/// exactly [`generate`]`(spec)`. Each later day draws a fresh order pool and
/// rescales its volumes so the day's total equals day 1's total times a
/// mean-one lognormal multiplier with log-scale `demand_volatility`.
pub fn generate_daily_series(
    spec: &GeneratorSpec,
    n_days: u32,
    demand_volatility: f64,
) -> Result<Vec<Instance>, GeneratorError> {
    if n_days == 0 {
        return Err(GeneratorError::InvalidSpec("n_days must be at least 1".into()));
    }
    if !(demand_volatility >= 0.0 && demand_volatility.is_finite()) {
        return Err(GeneratorError::InvalidSpec(
            "demand_volatility must be non-negative".into(),
        ));
    }
    let first = generate(spec)?;
    let base_total = first.total_volume();

    let mut multipliers = ChaCha8Rng::seed_from_u64(spec.seed);
    multipliers.set_stream(1);

    let mut days = Vec::with_capacity(n_days as usize);
    days.push(first);
    for day in 2..=n_days {
        let z: f64 = StandardNormal.sample(&mut multipliers);
        let sigma = demand_volatility;
        let factor = (sigma * z - 0.5 * sigma * sigma).exp();

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(day as u64);
        let mut orders = draw_orders(spec, day, &mut rng);
        let raw: f64 = orders.iter().map(|o| o.volume).sum();
        let scale = factor * base_total / raw;
        for o in &mut orders {
            o.volume = round2(o.volume * scale).max(0.01);
        }

        let mut instance = days[0].clone();
        instance.planning_day = day;
        instance.orders = orders;
        days.push(instance);
    }
    Ok(days)
}

/// Warehouse ids of a generated instance in rank order.
pub fn ranked_warehouses(instance: &Instance) -> Vec<WarehouseId> {
    let mut ws: Vec<_> = instance.warehouses.iter().collect();
    ws.sort_by_key(|w| w.rank);
    ws.into_iter().map(|w| w.id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::allocate;
    use crate::model::{initial_residuals, validate_instance, PlanConfig};

    #[test]
    fn generated_instances_are_valid() {
        for seed in 0..20 {
            let spec = GeneratorSpec {
                seed,
                eligibility_density: 0.5,
                ..GeneratorSpec::default()
            };
            let inst = generate(&spec).unwrap();
            assert!(validate_instance(&inst).is_empty());
            assert_eq!(inst.orders.len(), 100);
        }
    }

    #[test]
    fn same_spec_same_instance() {
        let spec = GeneratorSpec {
            seed: 1,
            n_orders: 10,
            eligibility_density: 1.0,
            ..GeneratorSpec::default()
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = GeneratorSpec { seed: 2, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn capacity_tracks_tightness() {
        let spec = GeneratorSpec {
            n_orders: 2_000,
            n_stores: 50,
            capacity_tightness: 0.7,
            ..GeneratorSpec::default()
        };
        let inst = generate(&spec).unwrap();
        let total_cap: f64 = inst.stores.iter().map(|s| s.base_capacity).sum();
        let target = 0.7 * inst.total_volume();
        assert!(total_cap >= target - 1e-6);
        assert!(total_cap <= target + inst.stores.len() as f64);
        for s in &inst.stores {
            assert!((s.flow_through_deduction - 0.1 * s.base_capacity).abs() <= 0.005 + 1e-9);
        }
    }

    #[test]
    fn stores_are_assigned_round_robin() {
        let spec = GeneratorSpec::default();
        let inst = generate(&spec).unwrap();
        for (i, s) in inst.stores.iter().enumerate() {
            assert_eq!(s.route_id.as_str(), route_id(i % spec.n_routes));
        }
    }

    #[test]
    fn loose_capacity_accepts_everything_eligible() {
        let spec = GeneratorSpec {
            seed: 3,
            n_orders: 500,
            capacity_tightness: 10.0,
            category_tightness: 10.0,
            eligibility_density: 0.7,
            ..GeneratorSpec::default()
        };
        let inst = generate(&spec).unwrap();
        let plan = PlanConfig::from_instance(&inst);
        let r = allocate(&inst, &plan, &initial_residuals(&inst)).unwrap();
        let eligible = crate::engine::filter_eligible(&inst, &plan).eligible.len();
        assert_eq!(r.accepted.len(), eligible);
        assert!(r.rejections.values().all(|r| *r == crate::model::RejectionReason::IneligibleNode));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let cases = [
            GeneratorSpec { n_routes: 20, n_stores: 10, ..GeneratorSpec::default() },
            GeneratorSpec { eligibility_density: 1.5, ..GeneratorSpec::default() },
            GeneratorSpec { capacity_tightness: 0.0, ..GeneratorSpec::default() },
            GeneratorSpec { priority_levels: 0, ..GeneratorSpec::default() },
            GeneratorSpec {
                volume_distribution: VolumeDistribution::Uniform { lo: 0.0, hi: 1.0 },
                ..GeneratorSpec::default()
            },
        ];
        for spec in cases {
            assert!(generate(&spec).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn single_day_series_is_generate() {
        let spec = GeneratorSpec::default();
        let series = generate_daily_series(&spec, 1, 0.3).unwrap();
        assert_eq!(series, vec![generate(&spec).unwrap()]);
    }

    #[test]
    fn zero_volatility_keeps_daily_totals() {
        let spec = GeneratorSpec::default();
        let series = generate_daily_series(&spec, 5, 0.0).unwrap();
        let day1 = series[0].total_volume();
        for day in &series[1..] {
            assert!((day.total_volume() - day1).abs() <= 0.005 * spec.n_orders as f64);
            assert_eq!(day.stores, series[0].stores);
            assert!(validate_instance(day).is_empty());
        }
        assert_ne!(series[1].orders, series[2].orders);
    }

    #[test]
    fn mean_volume_matches_distribution() {
        for dist in [
            VolumeDistribution::Uniform { lo: 2.0, hi: 30.0 },
            VolumeDistribution::Lognormal { mu: 1.5, sigma: 0.6 },
        ] {
            let spec = GeneratorSpec {
                n_orders: 20_000,
                volume_distribution: dist,
                ..GeneratorSpec::default()
            };
            let inst = generate(&spec).unwrap();
            let mean = inst.total_volume() / inst.orders.len() as f64;
            assert!((mean / dist.mean() - 1.0).abs() < 0.05, "{dist:?}: {mean}");
        }
    }
}
