//! Simulation-study harness and a synthetic first-stage downscaler that
//! produces realistic exposure ensembles.

// `!(x > 0.0)` deliberately rejects NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod firststage;
pub mod simgen;

pub use simgen::{run_grid, run_scenario, Arm, MetricsReport, ScenarioConfig};
