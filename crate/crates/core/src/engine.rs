//! Warehouse-aware cumulative allocation.
//!
//! The pipeline is: prune orders whose warehouse is switched off or whose
//! store may not receive the category, sort the survivors by
//! (warehouse rank ascending, priority descending, volume descending, id
//! ascending), then walk the sorted list once, accepting an order iff it fits
//! both the store's residual capacity and, for constrained categories, the
//! remaining route-category allowance. Trackers are updated on acceptance;
//! nothing is ever revisited.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    residual_capacities, validate_instance, validate_plan, AllocationResult, Instance, ModelError,
    Order, OrderId, PlanConfig, RejectionReason, ResidualCapacityMap, RouteCategoryLoad, StoreId,
    Violation, CAPACITY_EPSILON,
};
use crate::oracle;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("instance is invalid: {}", join(.0))]
    InvalidInstance(Vec<Violation>),
    #[error("plan is invalid: {}", join(.0))]
    InvalidPlan(Vec<Violation>),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// Validates both inputs, reporting instance problems first.
pub fn ensure_valid(instance: &Instance, plan: &PlanConfig) -> Result<(), EngineError> {
    let violations = validate_instance(instance);
    if !violations.is_empty() {
        return Err(EngineError::InvalidInstance(violations));
    }
    let violations = validate_plan(instance, plan);
    if !violations.is_empty() {
        return Err(EngineError::InvalidPlan(violations));
    }
    Ok(())
}

/// Lexicographic allocation key. `Ord` is a strict total order as long as
/// order ids are unique.
#[derive(Clone, Copy, Debug)]
pub struct SortKey<'a> {
    pub warehouse_rank: u32,
    pub priority: f64,
    pub volume: f64,
    pub order_id: &'a str,
}

impl<'a> SortKey<'a> {
    pub fn of(order: &'a Order, plan: &PlanConfig) -> Self {
        SortKey {
            warehouse_rank: plan.rank(order.warehouse_id.as_str()).unwrap_or(u32::MAX),
            priority: order.priority,
            volume: order.volume,
            order_id: order.id.as_str(),
        }
    }
}

impl Ord for SortKey<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.warehouse_rank
            .cmp(&other.warehouse_rank)
            .then_with(|| other.priority.total_cmp(&self.priority))
            .then_with(|| other.volume.total_cmp(&self.volume))
            .then_with(|| self.order_id.cmp(other.order_id))
    }
}

impl PartialOrd for SortKey<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for SortKey<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SortKey<'_> {}

/// Output of the pruning stage.
#[derive(Debug, Default)]
pub struct Eligibility<'a> {
    pub eligible: Vec<&'a Order>,
    pub rejections: BTreeMap<OrderId, RejectionReason>,
}

/// Drops orders from inactive warehouses (checked first) and orders whose
/// destination store is not eligible for the category.
pub fn filter_eligible<'a>(instance: &'a Instance, plan: &PlanConfig) -> Eligibility<'a> {
    let stores: HashMap<&str, _> = instance.stores.iter().map(|s| (s.id.as_str(), s)).collect();
    let active: HashMap<&str, bool> = instance
        .warehouses
        .iter()
        .map(|w| (w.id.as_str(), plan.is_active(w.id.as_str())))
        .collect();
    let mut out = Eligibility {
        eligible: Vec::with_capacity(instance.orders.len()),
        rejections: BTreeMap::new(),
    };
    for order in &instance.orders {
        let reason = if !active.get(order.warehouse_id.as_str()).copied().unwrap_or(false) {
            Some(RejectionReason::WarehouseInactive)
        } else if !stores
            .get(order.store_id.as_str())
            .is_some_and(|s| s.accepts(order.category_id.as_str()))
        {
            Some(RejectionReason::IneligibleNode)
        } else {
            None
        };
        match reason {
            Some(reason) => {
                out.rejections.insert(order.id.clone(), reason);
            }
            None => out.eligible.push(order),
        }
    }
    out
}

/// Sorts eligible orders into allocation sequence.
pub fn sort_eligible<'a>(eligible: Vec<&'a Order>, plan: &PlanConfig) -> Vec<&'a Order> {
    // Keys are resolved once and stored contiguously; comparisons then never
    // touch the plan or chase order pointers except on full ties.
    let ranks: HashMap<&str, u32> = plan.ranks.iter().map(|(w, r)| (w.as_str(), *r)).collect();
    let mut keyed: Vec<(SortKey<'a>, &'a Order)> = eligible
        .into_iter()
        .map(|o| {
            let key = SortKey {
                warehouse_rank: ranks.get(o.warehouse_id.as_str()).copied().unwrap_or(u32::MAX),
                priority: o.priority,
                volume: o.volume,
                order_id: o.id.as_str(),
            };
            (key, o)
        })
        .collect();
    keyed.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    keyed.into_iter().map(|(_, o)| o).collect()
}

/// Wall-clock time spent in each pipeline phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    #[serde(with = "millis")]
    pub filter: Duration,
    #[serde(with = "millis")]
    pub sort: Duration,
    #[serde(with = "millis")]
    pub allocate: Duration,
}

impl PhaseTimings {
    pub fn total(&self) -> Duration {
        self.filter + self.sort + self.allocate
    }
}

pub(crate) mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1e3)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let ms = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(ms.max(0.0) / 1e3))
    }
}

/// Runs the full pipeline on one planning day.
pub fn allocate(
    instance: &Instance,
    plan: &PlanConfig,
    residuals: &ResidualCapacityMap,
) -> Result<AllocationResult, EngineError> {
    allocate_timed(instance, plan, residuals).map(|(result, _)| result)
}

/// An eligible order resolved to dense indices.
struct Candidate {
    rank: u32,
    priority: f64,
    volume: f64,
    order: u32,
    /// Position of the order id in ascending id order.
    id_rank: u32,
    store: u32,
    /// Index into the (route, category) tracker table.
    lane: u32,
    limit: Option<f64>,
}

/// Rank of each order's id among all ids. Canonical (id-sorted) inputs skip
/// the string sort.
fn id_ranks(orders: &[Order]) -> Vec<u32> {
    if orders.windows(2).all(|w| w[0].id < w[1].id) {
        return (0..orders.len() as u32).collect();
    }
    let mut by_id: Vec<u32> = (0..orders.len() as u32).collect();
    by_id.sort_unstable_by(|&a, &b| orders[a as usize].id.cmp(&orders[b as usize].id));
    let mut rank = vec![0; orders.len()];
    for (r, &i) in by_id.iter().enumerate() {
        rank[i as usize] = r as u32;
    }
    rank
}

/// Same as [`allocate`], also reporting per-phase wall time. Validation is
/// not counted in any phase.
pub fn allocate_timed(
    instance: &Instance,
    plan: &PlanConfig,
    residuals: &ResidualCapacityMap,
) -> Result<(AllocationResult, PhaseTimings), EngineError> {
    ensure_valid(instance, plan)?;
    let orders = &instance.orders;

    // Filter: one sequential pass resolving every order to dense slots.
    let t0 = Instant::now();
    let n_categories = instance.categories.len();
    let store_slot: HashMap<&str, usize> = instance
        .stores
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let route_slot: HashMap<&str, usize> = instance
        .routes
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let category_slot: HashMap<&str, usize> = instance
        .categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id.as_str(), i))
        .collect();
    let limits: Vec<Option<f64>> = instance.categories.iter().map(|c| c.limit()).collect();
    let store_route: Vec<usize> = instance
        .stores
        .iter()
        .map(|s| route_slot[s.route_id.as_str()])
        .collect();
    let eligible_matrix: Vec<bool> = instance
        .stores
        .iter()
        .flat_map(|s| instance.categories.iter().map(|c| s.accepts(c.id.as_str())))
        .collect();
    let warehouse_rank: HashMap<&str, Option<u32>> = instance
        .warehouses
        .iter()
        .map(|w| {
            let id = w.id.as_str();
            (id, plan.is_active(id).then(|| plan.rank(id).unwrap_or(u32::MAX)))
        })
        .collect();

    let id_rank = id_ranks(orders);

    let mut pruned: Vec<(u32, RejectionReason)> = Vec::new();
    let mut candidates: Vec<Candidate> = Vec::with_capacity(orders.len());
    for (i, o) in orders.iter().enumerate() {
        let Some(rank) = warehouse_rank[o.warehouse_id.as_str()] else {
            pruned.push((i as u32, RejectionReason::WarehouseInactive));
            continue;
        };
        let m = store_slot[o.store_id.as_str()];
        let p = category_slot[o.category_id.as_str()];
        if !eligible_matrix[m * n_categories + p] {
            pruned.push((i as u32, RejectionReason::IneligibleNode));
            continue;
        }
        candidates.push(Candidate {
            rank,
            priority: o.priority,
            volume: o.volume,
            order: i as u32,
            id_rank: id_rank[i],
            store: m as u32,
            lane: (store_route[m] * n_categories + p) as u32,
            limit: limits[p],
        });
    }
    let t1 = Instant::now();

    // Sort: rank ascending, priority descending, volume descending, id.
    candidates.sort_unstable_by(|a, b| {
        a.rank
            .cmp(&b.rank)
            .then_with(|| b.priority.total_cmp(&a.priority))
            .then_with(|| b.volume.total_cmp(&a.volume))
            .then_with(|| a.id_rank.cmp(&b.id_rank))
    });
    let t2 = Instant::now();

    // Single pass, store check before the route check.
    let capacity: Vec<f64> = instance
        .stores
        .iter()
        .map(|s| residuals.get(s.id.as_str()).unwrap_or(0.0))
        .collect();
    let mut store_load = vec![0.0_f64; instance.stores.len()];
    let mut category_load = vec![0.0_f64; instance.routes.len() * n_categories];
    let mut category_touched = vec![false; category_load.len()];
    let mut accepted: Vec<u32> = Vec::new();
    let mut rejected: Vec<(u32, RejectionReason)> = Vec::new();
    for c in &candidates {
        let m = c.store as usize;
        let rc = c.lane as usize;
        let v = c.volume;
        if store_load[m] + v > capacity[m] + CAPACITY_EPSILON {
            rejected.push((c.order, RejectionReason::StoreCapacity));
            continue;
        }
        if let Some(limit) = c.limit {
            if category_load[rc] + v > limit + CAPACITY_EPSILON {
                rejected.push((c.order, RejectionReason::CategoryRouteLimit));
                continue;
            }
            category_load[rc] += v;
            category_touched[rc] = true;
        }
        store_load[m] += v;
        accepted.push(c.order);
    }
    let t3 = Instant::now();

    let objective_value =
        oracle::objective_of_orders(instance, plan, accepted.iter().map(|&i| &orders[i as usize]));
    let store_loads = instance
        .stores
        .iter()
        .zip(&store_load)
        .map(|(s, &load)| (s.id.clone(), load))
        .collect();
    let mut category_loads = Vec::new();
    for (r, route) in instance.routes.iter().enumerate() {
        for (p, category) in instance.categories.iter().enumerate() {
            let rc = r * n_categories + p;
            if category_touched[rc] {
                category_loads.push(RouteCategoryLoad {
                    route_id: route.id.clone(),
                    category_id: category.id.clone(),
                    load: category_load[rc],
                });
            }
        }
    }
    category_loads.sort_by(|a, b| {
        (&a.route_id, &a.category_id).cmp(&(&b.route_id, &b.category_id))
    });
    // Input order first, so id-sorted inputs build the map without shuffling.
    pruned.extend(rejected);
    pruned.sort_unstable_by_key(|(i, _)| *i);
    let rejections = pruned
        .into_iter()
        .map(|(i, reason)| (orders[i as usize].id.clone(), reason))
        .collect();

    let result = AllocationResult {
        planning_day: instance.planning_day,
        accepted: accepted.iter().map(|&i| orders[i as usize].id.clone()).collect(),
        store_loads,
        category_loads,
        rejections,
        objective_value,
    };
    let timings = PhaseTimings {
        filter: t1 - t0,
        sort: t2 - t1,
        allocate: t3 - t2,
    };
    Ok((result, timings))
}

/// Constraint family named by a [`FeasibilityViolation`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Accepted volume per store must stay within residual capacity.
    StoreCapacity,
    /// Accepted volume per (route, constrained category) within its cap.
    RouteCategoryLimit,
    /// Store must be eligible for the order's category.
    NodeEligibility,
    /// Order's warehouse must be activated.
    WarehouseActivation,
    /// Each order is selected at most once and must exist.
    BinarySelection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityViolation {
    pub constraint: Constraint,
    pub subject: String,
    pub detail: String,
}

/// Recomputes every constraint from the accepted id list alone. Trackers
/// stored in `result` are deliberately ignored.
pub fn check_feasibility(
    instance: &Instance,
    plan: &PlanConfig,
    residuals: &ResidualCapacityMap,
    result: &AllocationResult,
) -> Vec<FeasibilityViolation> {
    let mut out = Vec::new();
    let orders: BTreeMap<&str, &Order> =
        instance.orders.iter().map(|o| (o.id.as_str(), o)).collect();
    let stores: BTreeMap<&str, _> = instance.stores.iter().map(|s| (s.id.as_str(), s)).collect();
    let categories: BTreeMap<&str, _> = instance
        .categories
        .iter()
        .map(|c| (c.id.as_str(), c))
        .collect();

    let mut seen = HashSet::new();
    let mut per_store: BTreeMap<&str, f64> = BTreeMap::new();
    let mut per_route_category: BTreeMap<(&str, &str), f64> = BTreeMap::new();

    for id in &result.accepted {
        let Some(order) = orders.get(id.as_str()) else {
            out.push(FeasibilityViolation {
                constraint: Constraint::BinarySelection,
                subject: format!("order {id}"),
                detail: "accepted order does not exist in the instance".into(),
            });
            continue;
        };
        if !seen.insert(id.as_str()) {
            out.push(FeasibilityViolation {
                constraint: Constraint::BinarySelection,
                subject: format!("order {id}"),
                detail: "order accepted more than once".into(),
            });
            continue;
        }
        if !plan.is_active(order.warehouse_id.as_str()) {
            out.push(FeasibilityViolation {
                constraint: Constraint::WarehouseActivation,
                subject: format!("order {id}"),
                detail: format!("warehouse {} is not activated", order.warehouse_id),
            });
        }
        let store = stores.get(order.store_id.as_str());
        if !store.is_some_and(|s| s.accepts(order.category_id.as_str())) {
            out.push(FeasibilityViolation {
                constraint: Constraint::NodeEligibility,
                subject: format!("order {id}"),
                detail: format!(
                    "store {} is not eligible for category {}",
                    order.store_id, order.category_id
                ),
            });
        }
        *per_store.entry(order.store_id.as_str()).or_insert(0.0) += order.volume;
        let constrained = categories
            .get(order.category_id.as_str())
            .and_then(|c| c.limit())
            .is_some();
        if let (true, Some(store)) = (constrained, store) {
            *per_route_category
                .entry((store.route_id.as_str(), order.category_id.as_str()))
                .or_insert(0.0) += order.volume;
        }
    }

    for (store, load) in per_store {
        let cap = residuals.get(store).unwrap_or(0.0);
        if load > cap + CAPACITY_EPSILON {
            out.push(FeasibilityViolation {
                constraint: Constraint::StoreCapacity,
                subject: format!("store {store}"),
                detail: format!("accepted load {load} exceeds residual capacity {cap}"),
            });
        }
    }
    for ((route, category), load) in per_route_category {
        let limit = categories[category].limit().unwrap_or(f64::INFINITY);
        if load > limit + CAPACITY_EPSILON {
            out.push(FeasibilityViolation {
                constraint: Constraint::RouteCategoryLimit,
                subject: format!("route {route} / category {category}"),
                detail: format!("accepted load {load} exceeds route limit {limit}"),
            });
        }
    }
    out
}

/// Inputs for the day after `day1`: the order pool minus everything accepted
/// and residuals reduced by the accepted store loads.
pub fn next_day_inputs(
    instance: &Instance,
    day1: &AllocationResult,
) -> Result<(Instance, ResidualCapacityMap), EngineError> {
    let prior: BTreeMap<StoreId, f64> = day1.store_loads.clone();
    let residuals = residual_capacities(instance, &prior)?;
    let accepted = day1.accepted_set();
    let mut next = instance.clone();
    next.orders.retain(|o| !accepted.contains(&o.id));
    next.planning_day = instance.planning_day + 1;
    Ok((next, residuals))
}

/// Reruns the pipeline on the leftover pool with accepted-load deductions.
/// Route-category trackers start from zero.
pub fn simulate_next_day(
    instance: &Instance,
    plan: &PlanConfig,
    day1: &AllocationResult,
) -> Result<AllocationResult, EngineError> {
    let (next, residuals) = next_day_inputs(instance, day1)?;
    allocate(&next, plan, &residuals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::{initial_residuals, Category, Route};

    fn single_store(base: f64, orders: Vec<Order>) -> Instance {
        Instance {
            planning_day: 1,
            warehouses: vec![warehouse("w1", 1), warehouse("w2", 2)],
            routes: vec![Route { id: "r1".into() }],
            categories: vec![Category {
                id: "c1".into(),
                constrained: false,
                route_limit: None,
            }],
            stores: vec![store("s1", "r1", base, 0.0, &["c1"])],
            orders,
        }
    }

    fn ids(list: &[&Order]) -> Vec<String> {
        list.iter().map(|o| o.id.to_string()).collect()
    }

    #[test]
    fn filter_keeps_everything_when_unconstrained() {
        let inst = small();
        let plan = PlanConfig::from_instance(&inst);
        let e = filter_eligible(&inst, &plan);
        assert_eq!(e.eligible.len(), 3);
        assert!(e.rejections.is_empty());
    }

    #[test]
    fn filter_marks_ineligible_node() {
        let mut inst = small();
        inst.stores[1].eligibility.insert("c1".into(), false);
        let plan = PlanConfig::from_instance(&inst);
        let e = filter_eligible(&inst, &plan);
        assert_eq!(e.rejections.len(), 1);
        assert_eq!(e.rejections[&OrderId::from("o2")], RejectionReason::IneligibleNode);
    }

    #[test]
    fn filter_inactive_warehouse_wins_over_eligibility() {
        let mut inst = single_store(100.0, Vec::new());
        for i in 0..10 {
            let wh = if i < 3 { "w2" } else { "w1" };
            inst.orders.push(order(&format!("o{i:02}"), "s1", wh, "c1", 1.0, 1.0));
        }
        inst.stores[0].eligibility.insert("c1".into(), false);
        inst.orders[0].store_id = "s1".into();
        let plan = PlanConfig::ranked(&inst, ["w1"]);
        let e = filter_eligible(&inst, &plan);
        let inactive = e
            .rejections
            .values()
            .filter(|r| **r == RejectionReason::WarehouseInactive)
            .count();
        assert_eq!(inactive, 3);
        assert_eq!(e.rejections.len(), 10);

        inst.stores[0].eligibility.insert("c1".into(), true);
        let e = filter_eligible(&inst, &plan);
        assert_eq!(e.eligible.len(), 7);
        assert_eq!(e.rejections.len(), 3);
    }

    #[test]
    fn rank_dominates_priority() {
        let inst = single_store(
            100.0,
            vec![
                order("B", "s1", "w2", "c1", 1.0, 9.0),
                order("A", "s1", "w1", "c1", 1.0, 5.0),
            ],
        );
        let plan = PlanConfig::from_instance(&inst);
        let sorted = sort_eligible(inst.orders.iter().collect(), &plan);
        assert_eq!(ids(&sorted), ["A", "B"]);
    }

    #[test]
    fn larger_volume_breaks_priority_tie() {
        let inst = single_store(
            100.0,
            vec![
                order("A", "s1", "w1", "c1", 10.0, 5.0),
                order("B", "s1", "w1", "c1", 20.0, 5.0),
            ],
        );
        let plan = PlanConfig::from_instance(&inst);
        let sorted = sort_eligible(inst.orders.iter().collect(), &plan);
        assert_eq!(ids(&sorted), ["B", "A"]);
    }

    #[test]
    fn id_breaks_full_tie() {
        let inst = single_store(
            100.0,
            vec![
                order("a02", "s1", "w1", "c1", 3.0, 5.0),
                order("a01", "s1", "w1", "c1", 3.0, 5.0),
            ],
        );
        let plan = PlanConfig::from_instance(&inst);
        let sorted = sort_eligible(inst.orders.iter().collect(), &plan);
        assert_eq!(ids(&sorted), ["a01", "a02"]);
    }

    #[test]
    fn single_order_fits() {
        let inst = single_store(10.0, vec![order("o1", "s1", "w1", "c1", 5.0, 1.0)]);
        let plan = PlanConfig::from_instance(&inst);
        let r = allocate(&inst, &plan, &initial_residuals(&inst)).unwrap();
        assert_eq!(r.accepted, vec![OrderId::from("o1")]);
        assert_eq!(r.store_loads[&StoreId::from("s1")], 5.0);
    }

    #[test]
    fn second_order_hits_store_capacity() {
        let inst = single_store(
            10.0,
            vec![
                order("o2", "s1", "w1", "c1", 6.0, 1.0),
                order("o1", "s1", "w1", "c1", 6.0, 1.0),
            ],
        );
        let plan = PlanConfig::from_instance(&inst);
        let r = allocate(&inst, &plan, &initial_residuals(&inst)).unwrap();
        assert_eq!(r.accepted, vec![OrderId::from("o1")]);
        assert_eq!(r.rejections[&OrderId::from("o2")], RejectionReason::StoreCapacity);
    }

    #[test]
    fn route_limit_is_scoped_per_route() {
        let mut stores = Vec::new();
        for (id, route) in [("s1", "r1"), ("s2", "r1"), ("s3", "r1"), ("s4", "r2")] {
            stores.push(store(id, route, 100.0, 0.0, &["c1"]));
        }
        let inst = Instance {
            planning_day: 1,
            warehouses: vec![warehouse("w1", 1)],
            routes: vec![Route { id: "r1".into() }, Route { id: "r2".into() }],
            categories: vec![Category {
                id: "c1".into(),
                constrained: true,
                route_limit: Some(10.0),
            }],
            stores,
            orders: vec![
                order("o1", "s1", "w1", "c1", 4.0, 1.0),
                order("o2", "s2", "w1", "c1", 4.0, 1.0),
                order("o3", "s3", "w1", "c1", 4.0, 1.0),
                order("o4", "s4", "w1", "c1", 4.0, 1.0),
            ],
        };
        let plan = PlanConfig::from_instance(&inst);
        let r = allocate(&inst, &plan, &initial_residuals(&inst)).unwrap();
        assert_eq!(r.accepted, ["o1", "o2", "o4"].map(OrderId::from).to_vec());
        assert_eq!(r.rejections[&OrderId::from("o3")], RejectionReason::CategoryRouteLimit);
        assert_eq!(r.category_loads.len(), 2);
        assert_eq!(r.category_loads[0].load, 8.0);
        assert_eq!(r.category_loads[1].load, 4.0);
    }

    #[test]
    fn store_check_precedes_category_check() {
        let mut inst = single_store(5.0, vec![order("o1", "s1", "w1", "c1", 6.0, 1.0)]);
        inst.categories[0].constrained = true;
        inst.categories[0].route_limit = Some(1.0);
        let plan = PlanConfig::from_instance(&inst);
        let r = allocate(&inst, &plan, &initial_residuals(&inst)).unwrap();
        assert_eq!(r.rejections[&OrderId::from("o1")], RejectionReason::StoreCapacity);
    }

    #[test]
    fn allocate_rejects_invalid_plan() {
        let inst = small();
        let mut plan = PlanConfig::from_instance(&inst);
        plan.ranks.insert("w2".into(), 1);
        let err = allocate(&inst, &plan, &initial_residuals(&inst)).unwrap_err();
        assert!(matches!(err, EngineError::InvalidPlan(_)));
    }

    #[test]
    fn epsilon_absorbs_accumulation_error() {
        let orders = (0..10)
            .map(|i| order(&format!("o{i}"), "s1", "w1", "c1", 0.1, 1.0))
            .collect();
        let inst = single_store(1.0, orders);
        let plan = PlanConfig::from_instance(&inst);
        let r = allocate(&inst, &plan, &initial_residuals(&inst)).unwrap();
        assert_eq!(r.accepted.len(), 10);
    }

    #[test]
    fn feasibility_flags_store_overload() {
        let inst = single_store(
            10.0,
            vec![
                order("o1", "s1", "w1", "c1", 6.0, 1.0),
                order("o2", "s1", "w1", "c1", 5.0, 1.0),
            ],
        );
        let plan = PlanConfig::from_instance(&inst);
        let hand = AllocationResult {
            accepted: vec!["o1".into(), "o2".into()],
            ..Default::default()
        };
        let v = check_feasibility(&inst, &plan, &initial_residuals(&inst), &hand);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].constraint, Constraint::StoreCapacity);
    }

    #[test]
    fn feasibility_flags_inactive_warehouse() {
        let inst = small();
        let plan = PlanConfig::ranked(&inst, ["w1"]);
        let hand = AllocationResult {
            accepted: vec!["o2".into()],
            ..Default::default()
        };
        let v = check_feasibility(&inst, &plan, &initial_residuals(&inst), &hand);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].constraint, Constraint::WarehouseActivation);
    }

    #[test]
    fn feasibility_flags_duplicates_and_unknown_ids() {
        let inst = small();
        let plan = PlanConfig::from_instance(&inst);
        let hand = AllocationResult {
            accepted: vec!["o1".into(), "o1".into(), "zz".into()],
            ..Default::default()
        };
        let v = check_feasibility(&inst, &plan, &initial_residuals(&inst), &hand);
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|v| v.constraint == Constraint::BinarySelection));
    }

    #[test]
    fn next_day_deducts_accepted_load() {
        let inst = single_store(
            10.0,
            vec![
                order("o1", "s1", "w1", "c1", 6.0, 1.0),
                order("o2", "s1", "w1", "c1", 6.0, 1.0),
            ],
        );
        let plan = PlanConfig::from_instance(&inst);
        let day1 = allocate(&inst, &plan, &initial_residuals(&inst)).unwrap();
        assert_eq!(day1.accepted, vec![OrderId::from("o1")]);
        let (next, residuals) = next_day_inputs(&inst, &day1).unwrap();
        assert_eq!(residuals.get("s1"), Some(4.0));
        assert_eq!(next.planning_day, 2);
        let day2 = simulate_next_day(&inst, &plan, &day1).unwrap();
        assert!(day2.accepted.is_empty());
        assert_eq!(day2.rejections[&OrderId::from("o2")], RejectionReason::StoreCapacity);
    }

    #[test]
    fn next_day_is_empty_after_full_acceptance() {
        let inst = small();
        let plan = PlanConfig::from_instance(&inst);
        let day1 = allocate(&inst, &plan, &initial_residuals(&inst)).unwrap();
        assert_eq!(day1.accepted.len(), 3);
        let day2 = simulate_next_day(&inst, &plan, &day1).unwrap();
        assert!(day2.accepted.is_empty());
        assert!(day2.rejections.is_empty());
    }
}
