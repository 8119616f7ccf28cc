//! Warehouse-aware cumulative allocation of pending retail orders to
//! capacity-constrained stores, with an exact small-instance oracle, a seeded
//! instance generator, service KPIs and the file formats used around them.

pub mod bench;
pub mod engine;
pub mod generator;
pub mod io;
pub mod kpi;
pub mod model;
pub mod oracle;
pub mod rolling;
pub mod store;

pub use engine::{allocate, check_feasibility, filter_eligible, simulate_next_day, sort_eligible};
pub use model::{
    residual_capacities, validate_instance, AllocationResult, Instance, Order, OrderId,
    PlanConfig, RejectionReason, ResidualCapacityMap,
};
