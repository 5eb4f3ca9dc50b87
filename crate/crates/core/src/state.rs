//! Everything the system currently believes about itself: per-node status,
//! pass times, calibration versions and the calibrated parameter values.
//!
//! Dependency freshness is tracked with integer versions. Each successful
//! calibration bumps the node's `cal_version`; each pass snapshots the
//! versions of the node's dependencies. A dependency whose current version
//! differs from the snapshot has been recalibrated since.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{CalGraph, NodeId};

pub const SNAPSHOT_FORMAT: &str = "calgraph-state";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeStatus {
    InSpec,
    OutOfSpec,
    /// Never measured. Treated as out of spec.
    Unknown,
    /// A calibration failed; only a later successful calibration clears it.
    FailedUnresolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    CalibrateFailed,
    /// `check_data` found the parameter off its stored value.
    OutOfSpecObserved,
    BadDataObserved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub status: NodeStatus,
    pub last_pass_time: Option<f64>,
    pub cal_version: u64,
    pub dep_versions_at_last_pass: BTreeMap<NodeId, u64>,
    pub last_figures_of_merit: BTreeMap<String, f64>,
}

impl Default for NodeRecord {
    fn default() -> Self {
        Self {
            status: NodeStatus::Unknown,
            last_pass_time: None,
            cal_version: 0,
            dep_versions_at_last_pass: BTreeMap::new(),
            last_figures_of_merit: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub value: f64,
    /// `cal_version` of the owning node when written; 0 for config guesses.
    pub version: u64,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("illegal transition on {node}: {reason}")]
    IllegalTransition { node: NodeId, reason: String },
    #[error("corrupt snapshot at line {line}: {reason}")]
    CorruptSnapshot { line: usize, reason: String },
    #[error("snapshot I/O: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateStore {
    records: BTreeMap<NodeId, NodeRecord>,
    params: BTreeMap<(NodeId, String), ParamEntry>,
}

impl StateStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fresh store with an `Unknown` record for every node and the config
    /// initial guesses loaded.
    pub fn for_graph(graph: &CalGraph) -> Self {
        let mut store = Self::new();
        store.attach(graph);
        store
    }

    /// Adds records for graph nodes missing from the store (e.g. after
    /// restoring a snapshot taken with a smaller graph) and fills in initial
    /// guesses for parameters that have no value yet.
    pub fn attach(&mut self, graph: &CalGraph) {
        for spec in graph.specs() {
            self.records.entry(spec.id.clone()).or_default();
            for (name, &value) in &spec.initial_params {
                self.params
                    .entry((spec.id.clone(), name.clone()))
                    .or_insert(ParamEntry {
                        value,
                        version: 0,
                        time: 0.0,
                    });
            }
        }
    }

    pub fn insert_node(&mut self, id: NodeId) {
        self.records.entry(id).or_default();
    }

    pub fn record(&self, id: &NodeId) -> Result<&NodeRecord, StateError> {
        self.records
            .get(id)
            .ok_or_else(|| StateError::UnknownNode(id.clone()))
    }

    pub fn records(&self) -> impl Iterator<Item = (&NodeId, &NodeRecord)> {
        self.records.iter()
    }

    pub fn cal_version(&self, id: &NodeId) -> Result<u64, StateError> {
        Ok(self.record(id)?.cal_version)
    }

    pub fn param(&self, node: &NodeId, name: &str) -> Option<&ParamEntry> {
        self.params.get(&(node.clone(), name.to_owned()))
    }

    pub fn params(&self) -> impl Iterator<Item = (&NodeId, &str, &ParamEntry)> {
        self.params.iter().map(|((n, p), e)| (n, p.as_str(), e))
    }

    /// Parameters owned by one node.
    pub fn node_params(&self, node: &NodeId) -> BTreeMap<String, f64> {
        self.params
            .iter()
            .filter(|((n, _), _)| n == node)
            .map(|((_, p), e)| (p.clone(), e.value))
            .collect()
    }

    /// Overwrites a stored value without touching versions. Used for fault
    /// injection; normal writes go through [`Self::record_calibration`].
    pub fn corrupt_param(&mut self, node: &NodeId, name: &str, factor: f64) -> Result<f64, StateError> {
        let entry = self
            .params
            .get_mut(&(node.clone(), name.to_owned()))
            .ok_or_else(|| StateError::UnknownNode(NodeId::new(format!("{node}:{name}"))))?;
        entry.value *= factor;
        Ok(entry.value)
    }

    /// A passing `check_data` or calibration.
    pub fn record_pass(
        &mut self,
        id: &NodeId,
        deps: &[NodeId],
        time: f64,
        foms: BTreeMap<String, f64>,
    ) -> Result<(), StateError> {
        if self.record(id)?.status == NodeStatus::FailedUnresolved {
            return Err(StateError::IllegalTransition {
                node: id.clone(),
                reason: "a check pass cannot clear an unresolved calibration failure".into(),
            });
        }
        self.write_pass(id, deps, time, foms)
    }

    fn write_pass(
        &mut self,
        id: &NodeId,
        deps: &[NodeId],
        time: f64,
        foms: BTreeMap<String, f64>,
    ) -> Result<(), StateError> {
        let mut snapshot = BTreeMap::new();
        for d in deps {
            snapshot.insert(d.clone(), self.cal_version(d)?);
        }
        let rec = self
            .records
            .get_mut(id)
            .ok_or_else(|| StateError::UnknownNode(id.clone()))?;
        rec.status = NodeStatus::InSpec;
        rec.last_pass_time = Some(time);
        rec.dep_versions_at_last_pass = snapshot;
        rec.last_figures_of_merit = foms;
        Ok(())
    }

    /// Writes new parameter values, bumps the version and records a pass.
    /// Clears an unresolved failure.
    pub fn record_calibration(
        &mut self,
        id: &NodeId,
        deps: &[NodeId],
        time: f64,
        new_params: &BTreeMap<String, f64>,
        foms: BTreeMap<String, f64>,
    ) -> Result<(), StateError> {
        let rec = self
            .records
            .get_mut(id)
            .ok_or_else(|| StateError::UnknownNode(id.clone()))?;
        rec.cal_version += 1;
        let version = rec.cal_version;
        for (name, &value) in new_params {
            self.params
                .insert((id.clone(), name.clone()), ParamEntry { value, version, time });
        }
        self.write_pass(id, deps, time, foms)
    }

    pub fn record_failure(&mut self, id: &NodeId, _time: f64, kind: FailureKind) -> Result<(), StateError> {
        let rec = self
            .records
            .get_mut(id)
            .ok_or_else(|| StateError::UnknownNode(id.clone()))?;
        rec.status = match (kind, rec.status) {
            (FailureKind::CalibrateFailed, _) => NodeStatus::FailedUnresolved,
            (_, NodeStatus::FailedUnresolved) => NodeStatus::FailedUnresolved,
            _ => NodeStatus::OutOfSpec,
        };
        Ok(())
    }

    /// Latest timestamp anywhere in the store.
    pub fn latest_time(&self) -> f64 {
        let passes = self.records.values().filter_map(|r| r.last_pass_time);
        let writes = self.params.values().map(|p| p.time);
        passes.chain(writes).fold(0.0, f64::max)
    }

    pub fn persist(&self, mut out: impl Write) -> Result<(), StateError> {
        let io = |e: std::io::Error| StateError::Io(e.to_string());
        let header = Header {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
        };
        writeln!(out, "{}", serde_json::to_string(&header).unwrap()).map_err(io)?;
        for (id, rec) in &self.records {
            let line = NodeLine {
                id: id.clone(),
                status: rec.status,
                last_pass_time: rec.last_pass_time,
                cal_version: rec.cal_version,
                dep_versions: rec.dep_versions_at_last_pass.clone(),
                foms: rec.last_figures_of_merit.clone(),
            };
            writeln!(out, "{}", serde_json::to_string(&line).unwrap()).map_err(io)?;
        }
        for ((node, param), entry) in &self.params {
            let line = ParamLine {
                node: node.clone(),
                param: param.clone(),
                value: entry.value,
                version: entry.version,
                time: entry.time,
            };
            writeln!(out, "{}", serde_json::to_string(&line).unwrap()).map_err(io)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.persist(&mut buf).expect("writing to memory");
        buf
    }

    pub fn restore(input: impl BufRead) -> Result<Self, StateError> {
        let mut store = Self::new();
        let mut saw_header = false;
        for (i, line) in input.lines().enumerate() {
            let line_no = i + 1;
            let corrupt = |reason: String| StateError::CorruptSnapshot { line: line_no, reason };
            let line = line.map_err(|e| corrupt(e.to_string()))?;
            if !saw_header {
                let header: Header = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
                if header.format != SNAPSHOT_FORMAT || header.version != SNAPSHOT_VERSION {
                    return Err(corrupt(format!(
                        "unsupported snapshot {} v{}",
                        header.format, header.version
                    )));
                }
                saw_header = true;
                continue;
            }
            match serde_json::from_str::<Line>(&line).map_err(|e| corrupt(e.to_string()))? {
                Line::Node(n) => {
                    if n.status == NodeStatus::InSpec && n.last_pass_time.is_none() {
                        return Err(corrupt(format!("{} is InSpec without a pass time", n.id)));
                    }
                    let rec = NodeRecord {
                        status: n.status,
                        last_pass_time: n.last_pass_time,
                        cal_version: n.cal_version,
                        dep_versions_at_last_pass: n.dep_versions,
                        last_figures_of_merit: n.foms,
                    };
                    if store.records.insert(n.id.clone(), rec).is_some() {
                        return Err(corrupt(format!("duplicate record for {}", n.id)));
                    }
                }
                Line::Param(p) => {
                    let entry = ParamEntry {
                        value: p.value,
                        version: p.version,
                        time: p.time,
                    };
                    store.params.insert((p.node, p.param), entry);
                }
            }
        }
        if !saw_header {
            return Err(StateError::CorruptSnapshot {
                line: 1,
                reason: "missing header".into(),
            });
        }
        Ok(store)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeLine {
    id: NodeId,
    status: NodeStatus,
    last_pass_time: Option<f64>,
    cal_version: u64,
    dep_versions: BTreeMap<NodeId, u64>,
    foms: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamLine {
    node: NodeId,
    param: String,
    value: f64,
    version: u64,
    time: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Line {
    Node(NodeLine),
    Param(ParamLine),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeSpec;

    fn graph() -> CalGraph {
        CalGraph::build(vec![
            NodeSpec::bare("A", &[]),
            NodeSpec::bare("B", &["A"]),
            NodeSpec::bare("C", &["B"]),
        ])
        .unwrap()
    }

    fn id(s: &str) -> NodeId {
        NodeId::from(s)
    }

    #[test]
    fn fresh_record_pass() {
        let mut s = StateStore::for_graph(&graph());
        assert_eq!(s.record(&id("A")).unwrap().status, NodeStatus::Unknown);
        s.record_pass(&id("A"), &[], 10.0, BTreeMap::new()).unwrap();
        let r = s.record(&id("A")).unwrap();
        assert_eq!(r.status, NodeStatus::InSpec);
        assert_eq!(r.last_pass_time, Some(10.0));
    }

    #[test]
    fn pass_snapshots_dependency_versions() {
        let mut s = StateStore::for_graph(&graph());
        for _ in 0..3 {
            s.record_calibration(&id("A"), &[], 1.0, &BTreeMap::new(), BTreeMap::new())
                .unwrap();
        }
        s.record_pass(&id("B"), &[id("A")], 2.0, BTreeMap::new()).unwrap();
        let snap = &s.record(&id("B")).unwrap().dep_versions_at_last_pass;
        assert_eq!(snap.get(&id("A")), Some(&3));
    }

    #[test]
    fn calibration_writes_params_and_bumps_version() {
        let mut s = StateStore::for_graph(&graph());
        let params = BTreeMap::from([("pi_length_ns".to_string(), 19.8)]);
        s.record_calibration(&id("B"), &[id("A")], 50.0, &params, BTreeMap::new())
            .unwrap();
        assert_eq!(s.param(&id("B"), "pi_length_ns").unwrap().value, 19.8);
        assert_eq!(s.cal_version(&id("B")).unwrap(), 1);
        assert_eq!(s.record(&id("B")).unwrap().status, NodeStatus::InSpec);

        s.record_calibration(&id("B"), &[id("A")], 60.0, &params, BTreeMap::new())
            .unwrap();
        assert_eq!(s.cal_version(&id("B")).unwrap(), 2);
    }

    #[test]
    fn unresolved_failure_rules() {
        let mut s = StateStore::for_graph(&graph());
        s.record_failure(&id("A"), 7.0, FailureKind::CalibrateFailed).unwrap();
        assert_eq!(s.record(&id("A")).unwrap().status, NodeStatus::FailedUnresolved);

        let err = s.record_pass(&id("A"), &[], 8.0, BTreeMap::new()).unwrap_err();
        assert!(matches!(err, StateError::IllegalTransition { .. }));

        // observing bad data does not clear the flag either
        s.record_failure(&id("A"), 8.0, FailureKind::BadDataObserved).unwrap();
        assert_eq!(s.record(&id("A")).unwrap().status, NodeStatus::FailedUnresolved);

        s.record_calibration(&id("A"), &[], 9.0, &BTreeMap::new(), BTreeMap::new())
            .unwrap();
        assert_eq!(s.record(&id("A")).unwrap().status, NodeStatus::InSpec);
    }

    #[test]
    fn bad_data_on_in_spec_node() {
        let mut s = StateStore::for_graph(&graph());
        s.record_pass(&id("A"), &[], 1.0, BTreeMap::new()).unwrap();
        s.record_failure(&id("A"), 2.0, FailureKind::BadDataObserved).unwrap();
        assert_eq!(s.record(&id("A")).unwrap().status, NodeStatus::OutOfSpec);
    }

    #[test]
    fn unknown_node_errors() {
        let mut s = StateStore::for_graph(&graph());
        assert_eq!(
            s.record_failure(&id("Z"), 0.0, FailureKind::CalibrateFailed),
            Err(StateError::UnknownNode(id("Z")))
        );
        assert!(s.record_pass(&id("Z"), &[], 0.0, BTreeMap::new()).is_err());
        assert!(s
            .record_calibration(&id("Z"), &[], 0.0, &BTreeMap::new(), BTreeMap::new())
            .is_err());
    }

    #[test]
    fn empty_store_round_trip() {
        let s = StateStore::new();
        let bytes = s.to_bytes();
        assert_eq!(
            String::from_utf8(bytes.clone()).unwrap(),
            "{\"format\":\"calgraph-state\",\"version\":1}\n"
        );
        assert_eq!(StateStore::restore(&bytes[..]).unwrap(), s);
    }

    #[test]
    fn populated_round_trip() {
        let mut s = StateStore::for_graph(&graph());
        let params = BTreeMap::from([("threshold".to_string(), 2.0000000000000004)]);
        let foms = BTreeMap::from([("assignment_fidelity".to_string(), 0.977)]);
        s.record_calibration(&id("A"), &[], 1.5, &params, foms).unwrap();
        s.record_pass(&id("B"), &[id("A")], 3.25, BTreeMap::new()).unwrap();
        s.record_failure(&id("C"), 4.0, FailureKind::CalibrateFailed).unwrap();
        let back = StateStore::restore(&s.to_bytes()[..]).unwrap();
        assert_eq!(back.records().count(), 3);
        assert_eq!(back, s);
    }

    #[test]
    fn truncated_line_reports_line_number() {
        let mut s = StateStore::for_graph(&graph());
        s.record_pass(&id("A"), &[], 1.0, BTreeMap::new()).unwrap();
        let text = String::from_utf8(s.to_bytes()).unwrap();
        let cut = &text[..text.len() - 10];
        match StateStore::restore(cut.as_bytes()) {
            Err(StateError::CorruptSnapshot { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected corrupt snapshot, got {other:?}"),
        }
    }

    #[test]
    fn missing_or_wrong_header() {
        assert!(matches!(
            StateStore::restore(&b""[..]),
            Err(StateError::CorruptSnapshot { line: 1, .. })
        ));
        assert!(matches!(
            StateStore::restore(&b"{\"format\":\"other\",\"version\":1}\n"[..]),
            Err(StateError::CorruptSnapshot { line: 1, .. })
        ));
    }
}
