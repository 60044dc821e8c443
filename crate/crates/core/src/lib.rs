//! Distributed moving-target enclosing for planar UAV teams.
//!
//! The pipeline each UAV runs every sampling period:
//!
//! 1. [`rlse`] estimates the relative position to every neighbor from
//!    self-displacements and ranges.
//! 2. [`dkf`] fuses direct target observations with neighbor observations
//!    shifted into the local frame through those relative positions.
//! 3. [`pattern`] integrates a coupled-oscillator phase that places the UAV on
//!    a circle around the target.
//! 4. [`controller`] turns estimation and pattern errors into a bounded
//!    acceleration command.
//!
//! [`engine`] wires these stages into synchronous rounds against the
//! ground-truth plant in [`world`], and [`config`], [`trace`] and [`report`]
//! handle scenario files, trace persistence and acceptance checks.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod controller;
pub mod dkf;
pub mod engine;
pub mod pattern;
pub mod report;
pub mod rlse;
pub mod topology;
pub mod trace;
pub mod world;

mod math;

pub use config::{ConfigError, ScenarioConfig};
pub use controller::ControllerGains;
pub use dkf::{DkfState, NeighborPacket};
pub use engine::{run_scenario, BoundReport, EngineError, ExecMode, RunOutput, TraceRecord};
pub use math::{Mat2, Mat4, Mat6, Vec2, Vec4, Vec6};
pub use pattern::{DesiredState, PhaseState};
pub use rlse::{PeWindowStats, RlseState};
pub use topology::{LaplacianBlocks, Topology, TopologyError};
pub use world::{AgentState, MeasurementBundle, NoiseConfig, Obstacle};
