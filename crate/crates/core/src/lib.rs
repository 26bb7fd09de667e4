//! Fault-tolerant active inference control of a simulated two-link arm.
//!
//! The controller fuses joint encoders, velocity sensors and a distorted
//! camera by gradient descent on a free-energy functional. Sensor faults are
//! handled either by learning the sensor precisions online or by a
//! threshold-based detect, isolate and recover pipeline.

pub mod config;
pub mod controller;
pub mod error;
pub mod fdi;
pub mod gpr;
pub mod harness;
pub mod plant;
pub mod precision;
pub mod sensors;

pub use config::{Mode, ScenarioConfig, Waypoint};
pub use controller::{BeliefState, CameraModel, ControllerGains, PrecisionConfig, PrecisionSet};
pub use error::{Error, Result};
pub use fdi::{FaultVerdict, IsolatedSource, MonitorPair, ResidualMonitor};
pub use gpr::{GprHyperparams, GprModel};
pub use harness::{run_comparison, run_scenario, Artifacts, RunResult};
pub use plant::{JointState, PlantParams};
pub use sensors::{FaultSpec, SensorBundle};
