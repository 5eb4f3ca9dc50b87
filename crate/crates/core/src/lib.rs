//! Calibration orchestration on a dependency DAG.
//!
//! Nodes are calibrations with parameters, a timeout and tolerances. The
//! engine walks the graph from a target node, doing only the work whose
//! absence would leave the target out of spec. A simulated qubit device
//! stands in for hardware.

pub mod behaviors;
pub mod classify;
pub mod cli;
pub mod config;
pub mod device;
pub mod engine;
pub mod events;
pub mod fit;
pub mod graph;
pub mod scenario;
pub mod state;
