//! Domain types shared by every stage of the allocation pipeline.
//!
//! An [`Instance`] is one planning cycle: the pending order pool plus the
//! network it is dispatched into (stores grouped into routes, product
//! categories with optional per-route caps, and outbound warehouses). A
//! [`PlanConfig`] carries the planner's warehouse activation flags and
//! precedence ranks for a single run.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute slack used in every `load + volume <= capacity` comparison.
pub const CAPACITY_EPSILON: f64 = 1e-9;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(id: &str) -> Self {
                Self(id.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(id: String) -> Self {
                Self(id)
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

id_type!(
    /// Order identifier. Ordered lexicographically; this order is the final
    /// tie-break of the allocation sort.
    OrderId
);
id_type!(StoreId);
id_type!(RouteId);
id_type!(CategoryId);
id_type!(WarehouseId);

/// One pending order line. Orders are atomic: they ship whole or not at all.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub id: OrderId,
    pub store_id: StoreId,
    pub warehouse_id: WarehouseId,
    pub category_id: CategoryId,
    /// Dimensional weight (Desi).
    pub volume: f64,
    /// Business priority weight; larger ships first within a warehouse rank.
    pub priority: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Store {
    pub id: StoreId,
    pub route_id: RouteId,
    /// Daily receiving capacity (Desi).
    pub base_capacity: f64,
    /// Capacity consumed by flow-through traffic before replenishment.
    pub flow_through_deduction: f64,
    /// Whether the store may receive each category.
    pub eligibility: BTreeMap<CategoryId, bool>,
}

impl Store {
    pub fn accepts(&self, category: &str) -> bool {
        self.eligibility.get(category).copied().unwrap_or(false)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub id: RouteId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub constrained: bool,
    /// Cumulative volume cap enforced independently on every route. Only
    /// meaningful when `constrained` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route_limit: Option<f64>,
}

impl Category {
    /// The cap that applies to this category, if any.
    pub fn limit(&self) -> Option<f64> {
        if self.constrained {
            self.route_limit
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warehouse {
    pub id: WarehouseId,
    /// Display role, e.g. `Warehouse-Primary`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Default activation for plans derived from the instance.
    pub active: bool,
    /// Default precedence rank (1 dispatches first).
    pub rank: u32,
}

impl Warehouse {
    pub fn role_label(&self) -> String {
        match &self.label {
            Some(label) => label.clone(),
            None => format!("Warehouse-{}", self.id),
        }
    }
}

/// The full input of one planning cycle.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    #[serde(default)]
    pub planning_day: u32,
    pub warehouses: Vec<Warehouse>,
    pub routes: Vec<Route>,
    pub categories: Vec<Category>,
    pub stores: Vec<Store>,
    pub orders: Vec<Order>,
}

impl Instance {
    /// Sorts every collection by id. Serialization of a canonical instance is
    /// independent of the order in which entities were supplied.
    pub fn canonicalize(&mut self) {
        self.warehouses.sort_by(|a, b| a.id.cmp(&b.id));
        self.routes.sort_by(|a, b| a.id.cmp(&b.id));
        self.categories.sort_by(|a, b| a.id.cmp(&b.id));
        self.stores.sort_by(|a, b| a.id.cmp(&b.id));
        self.orders.sort_by(|a, b| a.id.cmp(&b.id));
    }

    pub fn canonical(mut self) -> Self {
        self.canonicalize();
        self
    }

    pub fn store(&self, id: &str) -> Option<&Store> {
        self.stores.iter().find(|s| s.id.as_str() == id)
    }

    pub fn warehouse(&self, id: &str) -> Option<&Warehouse> {
        self.warehouses.iter().find(|w| w.id.as_str() == id)
    }

    pub fn total_volume(&self) -> f64 {
        self.orders.iter().map(|o| o.volume).sum()
    }

    /// Hash-indexed view for lookups by id.
    pub fn index(&self) -> InstanceIndex<'_> {
        InstanceIndex::new(self)
    }
}

/// Borrowed id lookup tables over an [`Instance`].
#[derive(Debug)]
pub struct InstanceIndex<'a> {
    pub orders: HashMap<&'a str, &'a Order>,
    pub stores: HashMap<&'a str, &'a Store>,
    pub routes: HashMap<&'a str, &'a Route>,
    pub categories: HashMap<&'a str, &'a Category>,
    pub warehouses: HashMap<&'a str, &'a Warehouse>,
}

impl<'a> InstanceIndex<'a> {
    fn new(instance: &'a Instance) -> Self {
        Self {
            orders: instance.orders.iter().map(|o| (o.id.as_str(), o)).collect(),
            stores: instance.stores.iter().map(|s| (s.id.as_str(), s)).collect(),
            routes: instance.routes.iter().map(|r| (r.id.as_str(), r)).collect(),
            categories: instance
                .categories
                .iter()
                .map(|c| (c.id.as_str(), c))
                .collect(),
            warehouses: instance
                .warehouses
                .iter()
                .map(|w| (w.id.as_str(), w))
                .collect(),
        }
    }
}

/// Planner controls for one run: which warehouses dispatch and in what order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanConfig {
    /// Warehouses missing from this map are treated as inactive.
    pub activations: BTreeMap<WarehouseId, bool>,
    pub ranks: BTreeMap<WarehouseId, u32>,
}

impl PlanConfig {
    /// The plan encoded by the instance's default warehouse flags and ranks.
    pub fn from_instance(instance: &Instance) -> Self {
        let mut plan = PlanConfig::default();
        for w in &instance.warehouses {
            plan.activations.insert(w.id.clone(), w.active);
            if w.active {
                plan.ranks.insert(w.id.clone(), w.rank);
            }
        }
        plan
    }

    /// Builds a plan activating exactly `order`, ranked by position (first = 1).
    pub fn ranked<I, W>(instance: &Instance, order: I) -> Self
    where
        I: IntoIterator<Item = W>,
        W: Into<WarehouseId>,
    {
        let mut plan = PlanConfig::default();
        for w in &instance.warehouses {
            plan.activations.insert(w.id.clone(), false);
        }
        for (pos, w) in order.into_iter().enumerate() {
            let w = w.into();
            plan.activations.insert(w.clone(), true);
            plan.ranks.insert(w, pos as u32 + 1);
        }
        plan
    }

    pub fn is_active(&self, warehouse: &str) -> bool {
        self.activations.get(warehouse).copied().unwrap_or(false)
    }

    pub fn rank(&self, warehouse: &str) -> Option<u32> {
        self.ranks.get(warehouse).copied()
    }

    pub fn active_warehouses(&self) -> impl Iterator<Item = &WarehouseId> {
        self.activations
            .iter()
            .filter(|(_, on)| **on)
            .map(|(id, _)| id)
    }
}

/// Largest rank in use by the instance's warehouses or the plan.
pub fn max_rank(instance: &Instance, plan: &PlanConfig) -> u32 {
    instance
        .warehouses
        .iter()
        .map(|w| w.rank)
        .chain(plan.ranks.values().copied())
        .max()
        .unwrap_or(1)
}

/// Per-store residual receiving capacity for one planning day.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResidualCapacityMap(pub BTreeMap<StoreId, f64>);

impl ResidualCapacityMap {
    pub fn get(&self, store: &str) -> Option<f64> {
        self.0.get(store).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StoreId, &f64)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("prior load references unknown store `{0}`")]
    UnknownStore(StoreId),
    #[error("prior load for store `{store}` is invalid: {load}")]
    InvalidLoad { store: StoreId, load: f64 },
}

/// Residual capacity `max(0, base - flow_through - prior_accepted)` per store.
/// Stores absent from `prior_accepted_load` are treated as carrying no load.
pub fn residual_capacities(
    instance: &Instance,
    prior_accepted_load: &BTreeMap<StoreId, f64>,
) -> Result<ResidualCapacityMap, ModelError> {
    let known: HashSet<&str> = instance.stores.iter().map(|s| s.id.as_str()).collect();
    for (store, &load) in prior_accepted_load {
        if !known.contains(store.as_str()) {
            return Err(ModelError::UnknownStore(store.clone()));
        }
        if !(load >= 0.0) || !load.is_finite() {
            return Err(ModelError::InvalidLoad {
                store: store.clone(),
                load,
            });
        }
    }
    let map = instance
        .stores
        .iter()
        .map(|s| {
            let prior = prior_accepted_load.get(&s.id).copied().unwrap_or(0.0);
            let residual = (s.base_capacity - s.flow_through_deduction - prior).max(0.0);
            (s.id.clone(), residual)
        })
        .collect();
    Ok(ResidualCapacityMap(map))
}

/// Residuals for a fresh day with no previously accepted load.
pub fn initial_residuals(instance: &Instance) -> ResidualCapacityMap {
    residual_capacities(instance, &BTreeMap::new()).expect("empty prior load is always valid")
}

/// Why an order was not allocated. Each rejected order carries the first
/// check it failed, in pipeline order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectionReason {
    IneligibleNode,
    WarehouseInactive,
    StoreCapacity,
    CategoryRouteLimit,
}

impl RejectionReason {
    pub const ALL: [RejectionReason; 4] = [
        RejectionReason::WarehouseInactive,
        RejectionReason::IneligibleNode,
        RejectionReason::StoreCapacity,
        RejectionReason::CategoryRouteLimit,
    ];

    pub fn code(self) -> &'static str {
        match self {
            RejectionReason::IneligibleNode => "INELIGIBLE_NODE",
            RejectionReason::WarehouseInactive => "WAREHOUSE_INACTIVE",
            RejectionReason::StoreCapacity => "STORE_CAPACITY",
            RejectionReason::CategoryRouteLimit => "CATEGORY_ROUTE_LIMIT",
        }
    }
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteCategoryLoad {
    pub route_id: RouteId,
    pub category_id: CategoryId,
    pub load: f64,
}

/// Outcome of one allocation run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub planning_day: u32,
    /// Accepted order ids in acceptance sequence.
    pub accepted: Vec<OrderId>,
    /// Cumulative accepted volume for every store (zero when nothing shipped).
    pub store_loads: BTreeMap<StoreId, f64>,
    /// Cumulative accepted volume per (route, constrained category) pair that
    /// received at least one order.
    pub category_loads: Vec<RouteCategoryLoad>,
    pub rejections: BTreeMap<OrderId, RejectionReason>,
    pub objective_value: f64,
}

impl AllocationResult {
    pub fn accepted_set(&self) -> BTreeSet<&OrderId> {
        self.accepted.iter().collect()
    }

    pub fn accepted_volume(&self) -> f64 {
        self.store_loads.values().sum()
    }

    pub fn rejection_counts(&self) -> BTreeMap<RejectionReason, usize> {
        let mut counts = BTreeMap::new();
        for reason in self.rejections.values() {
            *counts.entry(*reason).or_insert(0) += 1;
        }
        counts
    }
}

/// One store-day observation used for service KPIs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyServiceRecord {
    pub date: NaiveDate,
    pub store_id: StoreId,
    /// Requested batch volume.
    pub requested: f64,
    /// Shipped batch volume.
    pub shipped: f64,
    pub store_limit: f64,
}

/// Which invariant a [`Violation`] breaks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    DuplicateId,
    DanglingReference,
    NonPositiveVolume,
    NegativePriority,
    NegativeCapacity,
    NegativeFlowThrough,
    MissingEligibility,
    MissingRouteLimit,
    NegativeRouteLimit,
    InvalidRank,
    DuplicateRank,
    NoWarehouses,
    NoActiveWarehouse,
    MissingRank,
}

/// A broken invariant, naming the offending entity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Entity path, e.g. `orders[o7]` or `ranks[w2]`.
    pub entity: String,
    pub rule: Rule,
    /// For dangling references: the id that failed to resolve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

fn violation(entity: String, rule: Rule, message: String) -> Violation {
    Violation {
        entity,
        rule,
        reference: None,
        message,
    }
}

fn dangling(entity: String, kind: &str, reference: &str) -> Violation {
    Violation {
        message: format!("references unknown {kind} `{reference}`"),
        entity,
        rule: Rule::DanglingReference,
        reference: Some(reference.to_owned()),
    }
}

/// Reports repeated ids and returns the set of distinct ids.
fn duplicates<'a, I>(kind: &str, ids: I, out: &mut Vec<Violation>) -> HashSet<&'a str>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            out.push(violation(
                format!("{kind}[{id}]"),
                Rule::DuplicateId,
                format!("duplicate {kind} id `{id}`"),
            ));
        }
    }
    seen
}

/// Checks every structural invariant of an instance. An empty list means the
/// instance is well formed.
pub fn validate_instance(instance: &Instance) -> Vec<Violation> {
    let mut out = Vec::new();

    let warehouses =
        duplicates("warehouses", instance.warehouses.iter().map(|w| w.id.as_str()), &mut out);
    let routes = duplicates("routes", instance.routes.iter().map(|r| r.id.as_str()), &mut out);
    let categories =
        duplicates("categories", instance.categories.iter().map(|c| c.id.as_str()), &mut out);
    let stores = duplicates("stores", instance.stores.iter().map(|s| s.id.as_str()), &mut out);
    // Strictly ascending ids are distinct; only unsorted inputs need hashing.
    if !instance.orders.windows(2).all(|w| w[0].id < w[1].id) {
        duplicates("orders", instance.orders.iter().map(|o| o.id.as_str()), &mut out);
    }

    if instance.warehouses.is_empty() {
        out.push(violation(
            "warehouses".into(),
            Rule::NoWarehouses,
            "instance declares no warehouses".into(),
        ));
    }

    for w in &instance.warehouses {
        if w.rank < 1 {
            out.push(violation(
                format!("warehouses[{}]", w.id),
                Rule::InvalidRank,
                "rank must be at least 1".into(),
            ));
        }
    }
    let mut by_rank: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for w in instance.warehouses.iter().filter(|w| w.active) {
        by_rank.entry(w.rank).or_default().push(w.id.as_str());
    }
    for (rank, ids) in by_rank.iter().filter(|(_, ids)| ids.len() > 1) {
        out.push(violation(
            format!("warehouses[{}]", ids.join(",")),
            Rule::DuplicateRank,
            format!("active warehouses {} share rank {rank}", ids.join(", ")),
        ));
    }

    for c in &instance.categories {
        if c.constrained {
            match c.route_limit {
                None => out.push(violation(
                    format!("categories[{}]", c.id),
                    Rule::MissingRouteLimit,
                    "constrained category has no route_limit".into(),
                )),
                Some(limit) if !(limit >= 0.0) => out.push(violation(
                    format!("categories[{}]", c.id),
                    Rule::NegativeRouteLimit,
                    format!("route_limit must be non-negative, got {limit}"),
                )),
                Some(_) => {}
            }
        }
    }

    for s in &instance.stores {
        let entity = format!("stores[{}]", s.id);
        if !routes.contains(s.route_id.as_str()) {
            out.push(dangling(entity.clone(), "route", s.route_id.as_str()));
        }
        if !(s.base_capacity >= 0.0) {
            out.push(violation(
                entity.clone(),
                Rule::NegativeCapacity,
                format!("base_capacity must be non-negative, got {}", s.base_capacity),
            ));
        }
        if !(s.flow_through_deduction >= 0.0) {
            out.push(violation(
                entity.clone(),
                Rule::NegativeFlowThrough,
                format!(
                    "flow_through_deduction must be non-negative, got {}",
                    s.flow_through_deduction
                ),
            ));
        }
        for c in &instance.categories {
            if !s.eligibility.contains_key(&c.id) {
                out.push(violation(
                    entity.clone(),
                    Rule::MissingEligibility,
                    format!("no eligibility flag for category `{}`", c.id),
                ));
            }
        }
        for c in s.eligibility.keys() {
            if !categories.contains(c.as_str()) {
                out.push(dangling(entity.clone(), "category", c.as_str()));
            }
        }
    }

    for o in &instance.orders {
        let entity = || format!("orders[{}]", o.id);
        if !stores.contains(o.store_id.as_str()) {
            out.push(dangling(entity(), "store", o.store_id.as_str()));
        }
        if !warehouses.contains(o.warehouse_id.as_str()) {
            out.push(dangling(entity(), "warehouse", o.warehouse_id.as_str()));
        }
        if !categories.contains(o.category_id.as_str()) {
            out.push(dangling(entity(), "category", o.category_id.as_str()));
        }
        if !(o.volume > 0.0) || !o.volume.is_finite() {
            out.push(violation(
                entity(),
                Rule::NonPositiveVolume,
                format!("volume must be positive, got {}", o.volume),
            ));
        }
        if !(o.priority >= 0.0) || !o.priority.is_finite() {
            out.push(violation(
                entity(),
                Rule::NegativePriority,
                format!("priority must be non-negative, got {}", o.priority),
            ));
        }
    }

    out
}

/// Checks a plan against the instance it will run on. Entity paths are the
/// plan's own field paths (`activations[w]`, `ranks[w]`).
pub fn validate_plan(instance: &Instance, plan: &PlanConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let known: HashSet<&str> = instance.warehouses.iter().map(|w| w.id.as_str()).collect();

    for w in plan.activations.keys() {
        if !known.contains(w.as_str()) {
            out.push(dangling(format!("activations[{w}]"), "warehouse", w.as_str()));
        }
    }
    for (w, &rank) in &plan.ranks {
        if !known.contains(w.as_str()) {
            out.push(dangling(format!("ranks[{w}]"), "warehouse", w.as_str()));
        }
        if rank < 1 {
            out.push(violation(
                format!("ranks[{w}]"),
                Rule::InvalidRank,
                "rank must be at least 1".into(),
            ));
        }
    }

    let active: Vec<&WarehouseId> = plan.active_warehouses().collect();
    if active.is_empty() {
        out.push(violation(
            "activations".into(),
            Rule::NoActiveWarehouse,
            "at least one warehouse must be activated".into(),
        ));
    }
    let mut by_rank: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for w in active {
        match plan.rank(w.as_str()) {
            Some(rank) => by_rank.entry(rank).or_default().push(w.as_str()),
            None => out.push(violation(
                format!("ranks[{w}]"),
                Rule::MissingRank,
                format!("active warehouse `{w}` has no rank"),
            )),
        }
    }
    for (rank, ids) in by_rank.iter().filter(|(_, ids)| ids.len() > 1) {
        for id in ids {
            out.push(violation(
                format!("ranks[{id}]"),
                Rule::DuplicateRank,
                format!("rank {rank} is shared by active warehouses {}", ids.join(", ")),
            ));
        }
    }
    out
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn well_formed_instance_has_no_violations() {
        assert!(validate_instance(&small()).is_empty());
    }

    #[test]
    fn dangling_store_reference_is_reported() {
        let mut inst = small();
        inst.orders[1].store_id = "s9".into();
        let v = validate_instance(&inst);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::DanglingReference);
        assert_eq!(v[0].entity, "orders[o2]");
        assert_eq!(v[0].reference.as_deref(), Some("s9"));
    }

    #[test]
    fn shared_active_rank_is_reported_once() {
        let mut inst = small();
        inst.warehouses[1].rank = 1;
        let v = validate_instance(&inst);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::DuplicateRank);
        assert!(v[0].message.contains("rank 1"));
    }

    #[test]
    fn inactive_warehouses_may_share_ranks() {
        let mut inst = small();
        inst.warehouses[1].rank = 1;
        inst.warehouses[1].active = false;
        assert!(validate_instance(&inst).is_empty());
    }

    #[test]
    fn invalid_scalars_are_reported() {
        let mut inst = small();
        inst.orders[0].volume = 0.0;
        inst.orders[1].priority = -1.0;
        inst.stores[0].base_capacity = -5.0;
        inst.stores[1].eligibility.clear();
        inst.categories[0].constrained = true;
        let rules: Vec<Rule> = validate_instance(&inst).into_iter().map(|v| v.rule).collect();
        for r in [
            Rule::NonPositiveVolume,
            Rule::NegativePriority,
            Rule::NegativeCapacity,
            Rule::MissingEligibility,
            Rule::MissingRouteLimit,
        ] {
            assert!(rules.contains(&r), "{r:?} missing from {rules:?}");
        }
    }

    #[test]
    fn no_warehouses_is_a_violation() {
        let mut inst = small();
        inst.warehouses.clear();
        inst.orders.clear();
        let v = validate_instance(&inst);
        assert!(v.iter().any(|v| v.rule == Rule::NoWarehouses));
    }

    #[test]
    fn plan_validation_names_fields() {
        let inst = small();
        let mut plan = PlanConfig::from_instance(&inst);
        assert!(validate_plan(&inst, &plan).is_empty());

        plan.ranks.insert("w2".into(), 1);
        let v = validate_plan(&inst, &plan);
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|v| v.rule == Rule::DuplicateRank));
        assert_eq!(v[0].entity, "ranks[w1]");

        let off = PlanConfig::ranked(&inst, Vec::<&str>::new());
        let v = validate_plan(&inst, &off);
        assert_eq!(v[0].rule, Rule::NoActiveWarehouse);

        let mut missing = PlanConfig::ranked(&inst, ["w1"]);
        missing.activations.insert("w2".into(), true);
        let v = validate_plan(&inst, &missing);
        assert_eq!(v[0].entity, "ranks[w2]");
        assert_eq!(v[0].rule, Rule::MissingRank);
    }

    #[test]
    fn residuals_follow_deduction_and_clamp() {
        let mut inst = small();
        let none = BTreeMap::new();
        assert_eq!(residual_capacities(&inst, &none).unwrap().get("s1"), Some(80.0));

        let prior = BTreeMap::from([(StoreId::from("s1"), 90.0)]);
        assert_eq!(residual_capacities(&inst, &prior).unwrap().get("s1"), Some(0.0));

        inst.stores[0].base_capacity = 0.0;
        inst.stores[0].flow_through_deduction = 0.0;
        assert_eq!(residual_capacities(&inst, &none).unwrap().get("s1"), Some(0.0));
    }

    #[test]
    fn residuals_reject_unknown_store() {
        let prior = BTreeMap::from([(StoreId::from("nope"), 1.0)]);
        assert_eq!(
            residual_capacities(&small(), &prior),
            Err(ModelError::UnknownStore("nope".into()))
        );
    }

    #[test]
    fn max_rank_covers_plan_and_instance() {
        let inst = small();
        assert_eq!(max_rank(&inst, &PlanConfig::from_instance(&inst)), 2);
        let plan = PlanConfig::ranked(&inst, ["w2"]);
        assert_eq!(max_rank(&inst, &plan), 2);
    }

    #[test]
    fn canonical_order_is_by_id() {
        let mut inst = small();
        inst.orders.reverse();
        inst.stores.reverse();
        let canon = inst.canonical();
        assert_eq!(canon, small().canonical());
        assert_eq!(canon.orders[0].id.as_str(), "o1");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn residual_bounded_and_monotone(
                base in 0.0f64..500.0,
                flow in 0.0f64..200.0,
                a in 0.0f64..600.0,
                b in 0.0f64..600.0,
            ) {
                let mut inst = small();
                inst.stores[0].base_capacity = base;
                inst.stores[0].flow_through_deduction = flow;
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let r_lo = residual_capacities(&inst, &BTreeMap::from([(StoreId::from("s1"), lo)]))
                    .unwrap().get("s1").unwrap();
                let r_hi = residual_capacities(&inst, &BTreeMap::from([(StoreId::from("s1"), hi)]))
                    .unwrap().get("s1").unwrap();
                prop_assert!(r_hi <= r_lo);
                prop_assert!(r_lo >= 0.0 && r_lo <= base);
                prop_assert!(r_hi >= 0.0 && r_hi <= base);
            }
        }
    }
}
