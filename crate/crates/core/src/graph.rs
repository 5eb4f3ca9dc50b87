//! The calibration graph.
//!
//! Each calibration is a node; each node lists the nodes it depends on.
//! Edges are stored node → dependency, so "upstream" always means closer
//! to the root. The reverse adjacency (dependents) is computed once at
//! build time.
//!
//! Every ordering produced here is deterministic: ties are broken by the
//! order in which nodes were declared.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of a calibration node, e.g. `rabi_fine.q0`.
///
/// By convention the part after the last `.` lists the qubits the node acts
/// on, separated by `-` (`two_qubit_phase.q0-q1`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Calibration name without the qubit suffix.
    pub fn cal_name(&self) -> &str {
        match self.0.rsplit_once('.') {
            Some((cal, _)) => cal,
            None => &self.0,
        }
    }

    /// Qubit labels encoded in the suffix. Empty if the id has no suffix.
    pub fn qubits(&self) -> Vec<&str> {
        match self.0.rsplit_once('.') {
            Some((_, suffix)) if !suffix.is_empty() => suffix.split('-').collect(),
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// A family of experiments sweeping one parameter.
///
/// The meaning and units of `points` belong to the node behavior: absolute
/// values for wide calibration grids, offsets relative to the stored
/// parameter for small check scans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanTemplate {
    pub swept_parameter: String,
    pub points: Vec<f64>,
    pub shots_per_point: u32,
}

impl ScanTemplate {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn validate(&self) -> Result<(), String> {
        if self.points.is_empty() {
            return Err("scan has no points".into());
        }
        if self.shots_per_point == 0 {
            return Err("shots_per_point must be positive".into());
        }
        if self.points.iter().any(|p| !p.is_finite()) {
            return Err("scan points must be finite".into());
        }
        let increasing = self.points.windows(2).all(|w| w[0] < w[1]);
        let decreasing = self.points.windows(2).all(|w| w[0] > w[1]);
        if !(increasing || decreasing) {
            return Err("scan points must be strictly monotonic".into());
        }
        Ok(())
    }
}

/// Static definition of one calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub dependencies: Vec<NodeId>,
    /// Parameters this calibration writes.
    pub parameters: Vec<String>,
    /// Virtual seconds after a pass during which the pass still counts.
    pub timeout: f64,
    pub tolerance: BTreeMap<String, f64>,
    pub check_data_scan: ScanTemplate,
    pub calibrate_scan: ScanTemplate,
    /// Registered behavior name, see [`crate::behaviors`].
    pub behavior: String,
    /// Behavior-specific numeric options (e.g. pulse repetitions).
    pub behavior_options: BTreeMap<String, f64>,
    /// Starting values written to the parameter store without counting as a
    /// calibration.
    pub initial_params: BTreeMap<String, f64>,
}

impl NodeSpec {
    /// A spec with placeholder scans and no tolerances; handy for building
    /// graphs whose behavior is irrelevant.
    pub fn bare(id: &str, dependencies: &[&str]) -> Self {
        let scan = ScanTemplate {
            swept_parameter: "x".into(),
            points: vec![0.0],
            shots_per_point: 1,
        };
        Self {
            id: NodeId::from(id),
            dependencies: dependencies.iter().map(|d| NodeId::from(*d)).collect(),
            parameters: Vec::new(),
            timeout: 3600.0,
            tolerance: BTreeMap::new(),
            check_data_scan: scan.clone(),
            calibrate_scan: scan,
            behavior: String::new(),
            behavior_options: BTreeMap::new(),
            initial_params: BTreeMap::new(),
        }
    }

    fn validate(&self) -> Result<(), GraphError> {
        let invalid = |reason: String| GraphError::InvalidNode {
            id: self.id.clone(),
            reason,
        };
        if self.id.as_str().is_empty() {
            return Err(invalid("empty node id".into()));
        }
        if !(self.timeout > 0.0) || !self.timeout.is_finite() {
            return Err(invalid(format!("timeout must be positive, got {}", self.timeout)));
        }
        for (i, dep) in self.dependencies.iter().enumerate() {
            if dep == &self.id {
                return Err(invalid("node depends on itself".into()));
            }
            if self.dependencies[..i].contains(dep) {
                return Err(invalid(format!("duplicate dependency {dep}")));
            }
        }
        self.check_data_scan
            .validate()
            .map_err(|e| invalid(format!("check_data_scan: {e}")))?;
        self.calibrate_scan
            .validate()
            .map_err(|e| invalid(format!("calibrate_scan: {e}")))?;
        if self.check_data_scan.len() > self.calibrate_scan.len() {
            return Err(invalid(
                "check_data_scan has more points than calibrate_scan".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("duplicate node {0}")]
    DuplicateNode(NodeId),
    #[error("node {from} depends on unknown node {to}")]
    UnknownDependency { from: NodeId, to: NodeId },
    #[error("dependency cycle: {}", format_cycle(.0))]
    CycleDetected(Vec<NodeId>),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid node {id}: {reason}")]
    InvalidNode { id: NodeId, reason: String },
}

fn format_cycle(ids: &[NodeId]) -> String {
    let names: Vec<&str> = ids.iter().map(NodeId::as_str).collect();
    names.join(" -> ")
}

/// A validated, immutable calibration DAG.
#[derive(Debug, Clone)]
pub struct CalGraph {
    specs: Vec<NodeSpec>,
    index: HashMap<NodeId, usize>,
    /// For each node, indices of its dependencies in declaration order of
    /// the dependency list.
    deps: Vec<Vec<usize>>,
    /// For each node, indices of nodes depending on it, ascending.
    dependents: Vec<Vec<usize>>,
    topo: Vec<usize>,
}

impl CalGraph {
    /// Validates and builds a graph. Iteration order everywhere is the order
    /// of `specs`.
    pub fn build(specs: Vec<NodeSpec>) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            spec.validate()?;
            if index.insert(spec.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(spec.id.clone()));
            }
        }

        let mut deps = Vec::with_capacity(specs.len());
        for spec in &specs {
            let mut resolved = Vec::with_capacity(spec.dependencies.len());
            for dep in &spec.dependencies {
                match index.get(dep) {
                    Some(&j) => resolved.push(j),
                    None => {
                        return Err(GraphError::UnknownDependency {
                            from: spec.id.clone(),
                            to: dep.clone(),
                        })
                    }
                }
            }
            deps.push(resolved);
        }

        let mut dependents = vec![Vec::new(); specs.len()];
        for (i, ds) in deps.iter().enumerate() {
            for &d in ds {
                dependents[d].push(i);
            }
        }

        if let Some(cycle) = find_cycle(&deps) {
            return Err(GraphError::CycleDetected(
                cycle.into_iter().map(|i| specs[i].id.clone()).collect(),
            ));
        }

        let topo = kahn_order(&deps, &dependents, |_| true);
        Ok(Self {
            specs,
            index,
            deps,
            dependents,
            topo,
        })
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.index.contains_key(id)
    }

    pub fn spec(&self, id: &NodeId) -> Result<&NodeSpec, GraphError> {
        self.index
            .get(id)
            .map(|&i| &self.specs[i])
            .ok_or_else(|| GraphError::UnknownNode(id.clone()))
    }

    /// Node specs in declaration order.
    pub fn specs(&self) -> impl Iterator<Item = &NodeSpec> {
        self.specs.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &NodeId> {
        self.specs.iter().map(|s| &s.id)
    }

    pub fn dependencies(&self, id: &NodeId) -> Result<&[NodeId], GraphError> {
        Ok(&self.spec(id)?.dependencies)
    }

    /// Nodes that list `id` as a direct dependency, in declaration order.
    pub fn dependents(&self, id: &NodeId) -> Result<Vec<&NodeId>, GraphError> {
        let i = self.idx(id)?;
        Ok(self.dependents[i].iter().map(|&j| &self.specs[j].id).collect())
    }

    /// All edges as (node, dependency) pairs in declaration order.
    pub fn edges(&self) -> Vec<(&NodeId, &NodeId)> {
        self.specs
            .iter()
            .flat_map(|s| s.dependencies.iter().map(move |d| (&s.id, d)))
            .collect()
    }

    /// Every node after all of its dependencies; Kahn's algorithm with
    /// declaration-order tie-breaking.
    pub fn topological_order(&self) -> Vec<&NodeId> {
        self.topo.iter().map(|&i| &self.specs[i].id).collect()
    }

    /// Transitive dependency closure of `id`, excluding `id`, in
    /// topological order.
    pub fn ancestors(&self, id: &NodeId) -> Result<Vec<&NodeId>, GraphError> {
        let start = self.idx(id)?;
        let mut in_closure = vec![false; self.specs.len()];
        let mut stack = self.deps[start].clone();
        while let Some(n) = stack.pop() {
            if !in_closure[n] {
                in_closure[n] = true;
                stack.extend_from_slice(&self.deps[n]);
            }
        }
        let order = kahn_order(&self.deps, &self.dependents, |i| in_closure[i]);
        Ok(order.into_iter().map(|i| &self.specs[i].id).collect())
    }

    /// Transitive dependents of `id`, excluding `id`, in topological order.
    pub fn descendants(&self, id: &NodeId) -> Result<Vec<&NodeId>, GraphError> {
        let start = self.idx(id)?;
        let mut in_closure = vec![false; self.specs.len()];
        let mut stack = self.dependents[start].clone();
        while let Some(n) = stack.pop() {
            if !in_closure[n] {
                in_closure[n] = true;
                stack.extend_from_slice(&self.dependents[n]);
            }
        }
        Ok(self
            .topo
            .iter()
            .filter(|&&i| in_closure[i])
            .map(|&i| &self.specs[i].id)
            .collect())
    }

    fn idx(&self, id: &NodeId) -> Result<usize, GraphError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownNode(id.clone()))
    }
}

/// Kahn's algorithm over the subset of nodes accepted by `keep`. The ready
/// set is always drained smallest declaration index first.
fn kahn_order(
    deps: &[Vec<usize>],
    dependents: &[Vec<usize>],
    keep: impl Fn(usize) -> bool,
) -> Vec<usize> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let n = deps.len();
    let mut pending = vec![0usize; n];
    let mut ready = BinaryHeap::new();
    for i in (0..n).filter(|&i| keep(i)) {
        pending[i] = deps[i].iter().filter(|&&d| keep(d)).count();
        if pending[i] == 0 {
            ready.push(Reverse(i));
        }
    }
    let mut order = Vec::new();
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &j in &dependents[i] {
            if keep(j) {
                pending[j] -= 1;
                if pending[j] == 0 {
                    ready.push(Reverse(j));
                }
            }
        }
    }
    order
}

/// Returns one dependency cycle, starting from the lowest-indexed node on
/// it, or `None` if the graph is acyclic.
fn find_cycle(deps: &[Vec<usize>]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        OnStack,
        Done,
    }
    let n = deps.len();
    let mut mark = vec![Mark::New; n];
    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        // iterative DFS: (node, next dependency index)
        let mut path: Vec<(usize, usize)> = vec![(root, 0)];
        mark[root] = Mark::OnStack;
        while let Some(&mut (node, ref mut next)) = path.last_mut() {
            if *next < deps[node].len() {
                let d = deps[node][*next];
                *next += 1;
                match mark[d] {
                    Mark::New => {
                        mark[d] = Mark::OnStack;
                        path.push((d, 0));
                    }
                    Mark::OnStack => {
                        let start = path.iter().position(|&(p, _)| p == d).unwrap();
                        let mut cycle: Vec<usize> = path[start..].iter().map(|&(p, _)| p).collect();
                        let min_pos = cycle
                            .iter()
                            .enumerate()
                            .min_by_key(|&(_, &v)| v)
                            .map(|(i, _)| i)
                            .unwrap();
                        cycle.rotate_left(min_pos);
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[node] = Mark::Done;
                path.pop();
            }
        }
    }
    None
}
