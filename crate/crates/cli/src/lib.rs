//! Scenario-driven front end for the network simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod experiments;
pub mod report;
pub mod runner;
pub mod scenario;

pub use report::{emit_report, Reference, Report, REFERENCES};
pub use runner::{run_scenario, Manifest, RunOptions, RunReport};
pub use scenario::{Experiment, Scenario, ScenarioSpec, SweepAxis};
