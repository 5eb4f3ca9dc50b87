//! Graph and device configuration files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behaviors::registry;
use crate::device::DeviceConfig;
use crate::graph::{CalGraph, GraphError, NodeId, NodeSpec, ScanTemplate};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: String,
    #[serde(default)]
    pub dependencies: Vec<String>,
    pub parameters: Vec<String>,
    pub timeout_s: f64,
    pub tolerance: BTreeMap<String, f64>,
    pub behavior: String,
    pub check_data_scan: ScanTemplate,
    pub calibrate_scan: ScanTemplate,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub behavior_options: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub initial_params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub nodes: Vec<NodeConfig>,
}

impl NodeConfig {
    /// Checks the behavior reference against the registry.
    fn to_spec(&self) -> Result<NodeSpec, GraphError> {
        let id = NodeId::new(self.id.clone());
        let invalid = |reason: String| GraphError::InvalidNode { id: id.clone(), reason };
        let behavior = registry(&self.behavior).ok_or_else(|| invalid(format!("unknown behavior {:?}", self.behavior)))?;

        let declared: BTreeSet<&str> = self.parameters.iter().map(String::as_str).collect();
        let written: BTreeSet<&str> = behavior.parameters().iter().copied().collect();
        if declared != written {
            return Err(invalid(format!(
                "behavior {} writes {:?}, config lists {:?}",
                self.behavior, written, declared
            )));
        }
        for check in behavior.tolerance_checks() {
            if !self.tolerance.contains_key(check.tolerance) {
                return Err(invalid(format!("missing tolerance {}", check.tolerance)));
            }
        }
        for key in self.tolerance.keys() {
            if !behavior.tolerance_checks().iter().any(|c| c.tolerance == key) {
                return Err(invalid(format!("tolerance {key} is not used by {}", self.behavior)));
            }
        }
        Ok(NodeSpec {
            id: id.clone(),
            dependencies: self.dependencies.iter().map(|d| NodeId::new(d.clone())).collect(),
            parameters: self.parameters.clone(),
            timeout: self.timeout_s,
            tolerance: self.tolerance.clone(),
            check_data_scan: self.check_data_scan.clone(),
            calibrate_scan: self.calibrate_scan.clone(),
            behavior: self.behavior.clone(),
            behavior_options: self.behavior_options.clone(),
            initial_params: self.initial_params.clone(),
        })
    }
}

impl GraphConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn build(&self) -> Result<CalGraph, ConfigError> {
        let specs = self.nodes.iter().map(NodeConfig::to_spec).collect::<Result<Vec<_>, _>>()?;
        Ok(CalGraph::build(specs)?)
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn parse_graph(text: &str) -> Result<CalGraph, ConfigError> {
    GraphConfig::parse(text)?.build()
}

pub fn load_graph(path: &Path) -> Result<CalGraph, ConfigError> {
    parse_graph(&read(path)?)
}

pub fn parse_device(text: &str) -> Result<DeviceConfig, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

pub fn load_device(path: &Path) -> Result<DeviceConfig, ConfigError> {
    parse_device(&read(path)?)
}

/// The two-qubit example graph shipped with the crate.
pub const EXAMPLE_GRAPH: &str = include_str!("../data/example_graph.json");
/// Default device matching the example graph.
pub const EXAMPLE_DEVICE: &str = include_str!("../data/device.json");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_graph_loads() {
        let g = parse_graph(EXAMPLE_GRAPH).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(parse_device(EXAMPLE_DEVICE).unwrap(), DeviceConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = EXAMPLE_GRAPH.replacen("\"timeout_s\"", "\"timeout\": 1, \"timeout_s\"", 1);
        assert!(matches!(parse_graph(&text), Err(ConfigError::Parse(_))));
        assert!(matches!(parse_graph("{\"nodes\": [], \"extra\": 1}"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn behavior_contract_is_enforced() {
        let mut cfg = GraphConfig::parse(EXAMPLE_GRAPH).unwrap();
        cfg.nodes[0].behavior = "ramsey".into();
        assert!(matches!(cfg.build(), Err(ConfigError::Graph(GraphError::InvalidNode { .. }))));

        let mut cfg = GraphConfig::parse(EXAMPLE_GRAPH).unwrap();
        cfg.nodes[0].tolerance.clear();
        assert!(cfg.build().is_err());

        let mut cfg = GraphConfig::parse(EXAMPLE_GRAPH).unwrap();
        cfg.nodes[0].parameters.pop();
        assert!(cfg.build().is_err());
    }

    #[test]
    fn cycle_is_reported() {
        let mut cfg = GraphConfig::parse(EXAMPLE_GRAPH).unwrap();
        let first = cfg.nodes[0].id.clone();
        let second = cfg.nodes[1].id.clone();
        cfg.nodes[0].dependencies.push(second.clone());
        match cfg.build() {
            Err(ConfigError::Graph(GraphError::CycleDetected(ids))) => {
                assert_eq!(ids, vec![NodeId::new(first), NodeId::new(second)]);
            }
            other => panic!("expected a cycle, got {other:?}"),
        }
    }
}
