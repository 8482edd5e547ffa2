//! Simulation of the modified massive Arratia flow: coalescing Brownian
//! particles whose clusters diffuse at rate `1 / mass`, together with Monte
//! Carlo studies of their occupation statistics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod coupling;
pub mod engine;
pub mod error;
pub mod exec;
pub mod flow;
pub mod occupation;
pub mod paths;
pub mod report;
pub mod rng;
pub mod stats;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{Error, Result};
pub use exec::Execution;
pub use flow::{apply_flow_map, apply_flow_map_with, Domain, FlowOptions, FlowRealization, Variant};
pub use occupation::{FunctionId, OccupationSample, PeriodicFunction};
pub use paths::{sample_driving, DrivingEnsemble, TimeGrid};
pub use stats::Estimate;
