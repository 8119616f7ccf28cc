//! Exact solver for small instances.
//!
//! Maximizes `sum_i (lambda * (rank_max + 1 - rank(i)) + priority_i) * x_i`
//! subject to store residual capacity, per-route caps on constrained
//! categories, eligibility and warehouse activation, with binary `x_i`.
//! Two independent routes are provided: plain enumeration of every subset
//! and a depth-first branch-and-bound bounded by per-store fractional
//! knapsacks. Among optimal sets the one whose ascending id sequence is
//! lexicographically smallest is returned, so both routes agree exactly.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{allocate, ensure_valid, filter_eligible, EngineError};
use crate::model::{
    max_rank, Instance, Order, OrderId, PlanConfig, ResidualCapacityMap, CAPACITY_EPSILON,
};

/// Largest candidate count accepted by [`solve_enumeration`].
pub const ENUMERATION_LIMIT: usize = 24;
/// Largest candidate count accepted by [`solve_exact`].
pub const BRANCH_AND_BOUND_LIMIT: usize = 64;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("order `{0}` is not part of the instance")]
    UnknownOrder(OrderId),
    #[error("{candidates} candidate orders exceed the solver limit of {limit}")]
    TooLarge { candidates: usize, limit: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// `1 + sum of all priorities`: one unit of rank term then outweighs any
/// difference in priority sums between two order sets.
pub fn lambda_for(instance: &Instance) -> f64 {
    1.0 + instance.orders.iter().map(|o| o.priority).sum::<f64>()
}

/// Per-warehouse rank term `lambda * (rank_max + 1 - rank)`.
fn rank_terms<'a>(instance: &'a Instance, plan: &PlanConfig) -> HashMap<&'a str, f64> {
    let lambda = lambda_for(instance);
    let top = max_rank(instance, plan) as f64;
    instance
        .warehouses
        .iter()
        .map(|w| {
            let rank = plan.rank(w.id.as_str()).unwrap_or(w.rank) as f64;
            (w.id.as_str(), lambda * (top + 1.0 - rank))
        })
        .collect()
}

pub(crate) fn objective_of_orders<'a, I>(instance: &Instance, plan: &PlanConfig, orders: I) -> f64
where
    I: IntoIterator<Item = &'a Order>,
{
    let terms = rank_terms(instance, plan);
    orders
        .into_iter()
        .map(|o| terms.get(o.warehouse_id.as_str()).copied().unwrap_or(0.0) + o.priority)
        .sum()
}

/// Objective value of an arbitrary order set, summed in the given order.
pub fn objective_value(
    instance: &Instance,
    plan: &PlanConfig,
    chosen: &[OrderId],
) -> Result<f64, OracleError> {
    let by_id: HashMap<&str, &Order> = instance.orders.iter().map(|o| (o.id.as_str(), o)).collect();
    let orders = chosen
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| OracleError::UnknownOrder(id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(objective_of_orders(instance, plan, orders))
}

/// Search limits. `None` means unlimited.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_nodes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_limit: Option<Duration>,
}

impl SearchBudget {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn nodes(max_nodes: u64) -> Self {
        Self {
            max_nodes: Some(max_nodes),
            time_limit: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    /// Chosen order ids, ascending.
    pub chosen: Vec<OrderId>,
    pub objective: f64,
    /// True when the search completed within budget.
    pub optimal: bool,
    pub node_count: u64,
}

/// Eligible orders reduced to dense arrays, indexed in ascending id order.
struct Problem {
    ids: Vec<OrderId>,
    coef: Vec<f64>,
    volume: Vec<f64>,
    store: Vec<usize>,
    group: Vec<Option<usize>>,
    store_cap: Vec<f64>,
    group_cap: Vec<f64>,
}

impl Problem {
    fn compile(
        instance: &Instance,
        plan: &PlanConfig,
        residuals: &ResidualCapacityMap,
    ) -> Result<Self, OracleError> {
        ensure_valid(instance, plan)?;
        let mut eligible = filter_eligible(instance, plan).eligible;
        eligible.sort_by(|a, b| a.id.cmp(&b.id));

        let terms = rank_terms(instance, plan);
        let stores: HashMap<&str, _> =
            instance.stores.iter().map(|s| (s.id.as_str(), s)).collect();
        let limits: HashMap<&str, Option<f64>> = instance
            .categories
            .iter()
            .map(|c| (c.id.as_str(), c.limit()))
            .collect();

        let mut store_slot: HashMap<&str, usize> = HashMap::new();
        let mut group_slot: HashMap<(&str, &str), usize> = HashMap::new();
        let mut p = Problem {
            ids: Vec::new(),
            coef: Vec::new(),
            volume: Vec::new(),
            store: Vec::new(),
            group: Vec::new(),
            store_cap: Vec::new(),
            group_cap: Vec::new(),
        };
        for o in eligible {
            let next = store_slot.len();
            let s = *store_slot.entry(o.store_id.as_str()).or_insert_with(|| {
                p.store_cap
                    .push(residuals.get(o.store_id.as_str()).unwrap_or(0.0));
                next
            });
            let group = match limits[o.category_id.as_str()] {
                Some(limit) => {
                    let route = stores[o.store_id.as_str()].route_id.as_str();
                    let next = group_slot.len();
                    Some(
                        *group_slot
                            .entry((route, o.category_id.as_str()))
                            .or_insert_with(|| {
                                p.group_cap.push(limit);
                                next
                            }),
                    )
                }
                None => None,
            };
            p.ids.push(o.id.clone());
            p.coef.push(terms[o.warehouse_id.as_str()] + o.priority);
            p.volume.push(o.volume);
            p.store.push(s);
            p.group.push(group);
        }
        Ok(p)
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn chosen(&self, mask: u64) -> Vec<OrderId> {
        (0..self.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| self.ids[i].clone())
            .collect()
    }
}

fn tolerance(value: f64) -> f64 {
    1e-9 * value.abs().max(1.0)
}

/// True when `a`'s ascending index sequence is lexicographically smaller
/// than `b`'s. Indices follow ascending id order.
fn lex_smaller(a: u64, b: u64) -> bool {
    let diff = a ^ b;
    if diff == 0 {
        return false;
    }
    let d = diff.trailing_zeros();
    let (with, without) = if a >> d & 1 == 1 { (a, b) } else { (b, a) };
    let without_continues = d < 63 && without >> (d + 1) != 0;
    // The set containing `d` wins unless the other sequence stops first.
    let with_wins = without_continues;
    (with == a) == with_wins
}

struct Clock {
    start: Instant,
    budget: SearchBudget,
    nodes: u64,
    exhausted: bool,
}

impl Clock {
    fn new(budget: SearchBudget) -> Self {
        Self {
            start: Instant::now(),
            budget,
            nodes: 0,
            exhausted: false,
        }
    }

    fn tick(&mut self) -> bool {
        self.nodes += 1;
        if let Some(max) = self.budget.max_nodes {
            if self.nodes > max {
                self.exhausted = true;
            }
        }
        if self.nodes % 1024 == 0 {
            if let Some(limit) = self.budget.time_limit {
                if self.start.elapsed() > limit {
                    self.exhausted = true;
                }
            }
        }
        !self.exhausted
    }
}

/// Exhaustive search over every subset of eligible orders.
pub fn solve_enumeration(
    instance: &Instance,
    plan: &PlanConfig,
    residuals: &ResidualCapacityMap,
    budget: SearchBudget,
) -> Result<OracleSolution, OracleError> {
    let p = Problem::compile(instance, plan, residuals)?;
    let n = p.len();
    if n > ENUMERATION_LIMIT {
        return Err(OracleError::TooLarge {
            candidates: n,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut clock = Clock::new(budget);
    let mut best_mask = 0u64;
    let mut best_value = 0.0;
    let mut store_load = vec![0.0; p.store_cap.len()];
    let mut group_load = vec![0.0; p.group_cap.len()];

    for mask in 0..(1u64 << n) {
        if !clock.tick() {
            break;
        }
        store_load.iter_mut().for_each(|l| *l = 0.0);
        group_load.iter_mut().for_each(|l| *l = 0.0);
        let mut value = 0.0;
        for i in (0..n).filter(|i| mask >> i & 1 == 1) {
            store_load[p.store[i]] += p.volume[i];
            if let Some(g) = p.group[i] {
                group_load[g] += p.volume[i];
            }
            value += p.coef[i];
        }
        let feasible = store_load
            .iter()
            .zip(&p.store_cap)
            .all(|(l, c)| *l <= c + CAPACITY_EPSILON)
            && group_load
                .iter()
                .zip(&p.group_cap)
                .all(|(l, c)| *l <= c + CAPACITY_EPSILON);
        if !feasible {
            continue;
        }
        let tol = tolerance(best_value);
        if value > best_value + tol
            || ((value - best_value).abs() <= tol && lex_smaller(mask, best_mask))
        {
            best_value = value;
            best_mask = mask;
        }
    }

    let chosen = p.chosen(best_mask);
    Ok(OracleSolution {
        objective: objective_value(instance, plan, &chosen)?,
        chosen,
        optimal: !clock.exhausted,
        node_count: clock.nodes,
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Goal {
    /// Find a strictly better value than the incumbent.
    Improve,
    /// Find any completion reaching the target value.
    Reach(f64),
}

struct Search<'p> {
    p: &'p Problem,
    /// Branching sequence: candidates by decreasing value density.
    order: Vec<usize>,
    /// Candidates per store, in branching sequence.
    by_store: Vec<Vec<usize>>,
    /// Position of each candidate in `order`.
    position: Vec<usize>,
    fixed: Vec<Option<bool>>,
    store_load: Vec<f64>,
    group_load: Vec<f64>,
    goal: Goal,
    best_value: f64,
    best_mask: u64,
    found: bool,
    clock: Clock,
}

impl<'p> Search<'p> {
    fn new(p: &'p Problem, budget: SearchBudget) -> Self {
        let n = p.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            (p.coef[b] / p.volume[b])
                .total_cmp(&(p.coef[a] / p.volume[a]))
                .then(a.cmp(&b))
        });
        let mut position = vec![0; n];
        let mut by_store = vec![Vec::new(); p.store_cap.len()];
        for (pos, &i) in order.iter().enumerate() {
            position[i] = pos;
            by_store[p.store[i]].push(i);
        }
        Self {
            p,
            order,
            by_store,
            position,
            fixed: vec![None; n],
            store_load: vec![0.0; p.store_cap.len()],
            group_load: vec![0.0; p.group_cap.len()],
            goal: Goal::Improve,
            best_value: f64::NEG_INFINITY,
            best_mask: 0,
            found: false,
            clock: Clock::new(budget),
        }
    }

    fn fits(&self, i: usize) -> bool {
        let p = self.p;
        self.store_load[p.store[i]] + p.volume[i] <= p.store_cap[p.store[i]] + CAPACITY_EPSILON
            && p.group[i].is_none_or(|g| {
                self.group_load[g] + p.volume[i] <= p.group_cap[g] + CAPACITY_EPSILON
            })
    }

    /// Sum over stores of the fractional knapsack on undecided candidates
    /// that still fit on their own.
    fn bound(&self, depth: usize) -> f64 {
        let p = self.p;
        let mut total = 0.0;
        for (s, items) in self.by_store.iter().enumerate() {
            let mut room = p.store_cap[s] - self.store_load[s] + CAPACITY_EPSILON;
            for &i in items {
                if room <= 0.0 {
                    break;
                }
                if self.position[i] < depth || self.fixed[i] == Some(false) || !self.fits(i) {
                    continue;
                }
                let take = (room / p.volume[i]).min(1.0);
                total += take * p.coef[i];
                room -= take * p.volume[i];
            }
        }
        total
    }

    fn greedy_incumbent(&mut self) {
        let mut mask = 0;
        let mut value = 0.0;
        for d in 0..self.order.len() {
            let i = self.order[d];
            if self.fits(i) {
                self.take(i);
                mask |= 1 << i;
                value += self.p.coef[i];
            }
        }
        for i in 0..self.p.len() {
            if mask >> i & 1 == 1 {
                self.release(i);
            }
        }
        self.best_value = value;
        self.best_mask = mask;
    }

    fn take(&mut self, i: usize) {
        self.store_load[self.p.store[i]] += self.p.volume[i];
        if let Some(g) = self.p.group[i] {
            self.group_load[g] += self.p.volume[i];
        }
    }

    fn release(&mut self, i: usize) {
        self.store_load[self.p.store[i]] -= self.p.volume[i];
        if let Some(g) = self.p.group[i] {
            self.group_load[g] -= self.p.volume[i];
        }
    }

    fn run(&mut self, goal: Goal) {
        self.goal = goal;
        self.found = false;
        self.store_load.iter_mut().for_each(|l| *l = 0.0);
        self.group_load.iter_mut().for_each(|l| *l = 0.0);
        self.dfs(0, 0.0, 0);
    }

    fn dfs(&mut self, depth: usize, value: f64, mask: u64) {
        if self.found || !self.clock.tick() {
            return;
        }
        if depth == self.order.len() {
            match self.goal {
                Goal::Improve => {
                    if value > self.best_value + tolerance(self.best_value) {
                        self.best_value = value;
                        self.best_mask = mask;
                    }
                }
                Goal::Reach(target) => {
                    if value >= target - tolerance(target) {
                        self.best_value = value;
                        self.best_mask = mask;
                        self.found = true;
                    }
                }
            }
            return;
        }
        let optimistic = value + self.bound(depth);
        let prune = match self.goal {
            Goal::Improve => optimistic <= self.best_value + tolerance(self.best_value),
            Goal::Reach(target) => optimistic < target - tolerance(target),
        };
        if prune {
            return;
        }
        let i = self.order[depth];
        if self.fixed[i] != Some(false) && self.fits(i) {
            self.take(i);
            self.dfs(depth + 1, value + self.p.coef[i], mask | 1 << i);
            self.release(i);
        }
        if self.fixed[i] != Some(true) {
            self.dfs(depth + 1, value, mask);
        }
    }
}

/// Branch-and-bound solve. When the budget runs out the best set found so
/// far is returned with `optimal = false`.
pub fn solve_exact(
    instance: &Instance,
    plan: &PlanConfig,
    residuals: &ResidualCapacityMap,
    budget: SearchBudget,
) -> Result<OracleSolution, OracleError> {
    let p = Problem::compile(instance, plan, residuals)?;
    let n = p.len();
    if n > BRANCH_AND_BOUND_LIMIT {
        return Err(OracleError::TooLarge {
            candidates: n,
            limit: BRANCH_AND_BOUND_LIMIT,
        });
    }

    let mut search = Search::new(&p, budget);
    search.greedy_incumbent();
    search.run(Goal::Improve);
    let target = search.best_value;
    let mut witness = search.best_mask;

    // Fix candidates in ascending id order, keeping each one whenever some
    // optimal set consistent with earlier decisions contains it.
    if !search.clock.exhausted {
        for i in 0..n {
            if witness >> i & 1 == 1 {
                search.fixed[i] = Some(true);
                continue;
            }
            search.fixed[i] = Some(true);
            search.run(Goal::Reach(target));
            if search.clock.exhausted {
                break;
            }
            if search.found {
                witness = search.best_mask;
            } else {
                search.fixed[i] = Some(false);
            }
        }
    }

    let chosen = p.chosen(witness);
    Ok(OracleSolution {
        objective: objective_value(instance, plan, &chosen)?,
        chosen,
        optimal: !search.clock.exhausted,
        node_count: search.clock.nodes,
    })
}

/// Heuristic versus exact objective on one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub heuristic_objective: f64,
    pub oracle_objective: f64,
    /// `(oracle - heuristic) / max(oracle, eps)`.
    pub relative_gap: f64,
    /// False when the oracle did not finish; the gap is then meaningless.
    pub usable: bool,
    pub oracle_nodes: u64,
}

pub fn gap_report(
    instance: &Instance,
    plan: &PlanConfig,
    residuals: &ResidualCapacityMap,
    budget: SearchBudget,
) -> Result<GapReport, OracleError> {
    let heuristic = allocate(instance, plan, residuals)?;
    let mut accepted = heuristic.accepted.clone();
    accepted.sort();
    let heuristic_objective = objective_value(instance, plan, &accepted)?;
    let exact = solve_exact(instance, plan, residuals, budget)?;
    let relative_gap =
        (exact.objective - heuristic_objective) / exact.objective.max(CAPACITY_EPSILON);
    Ok(GapReport {
        heuristic_objective,
        oracle_objective: exact.objective,
        relative_gap,
        usable: exact.optimal,
        oracle_nodes: exact.node_count,
    })
}
