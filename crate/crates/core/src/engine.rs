//! The three interaction methods (`check_state`, `check_data`,
//! `calibrate`) and the `maintain` / `diagnose` traversals.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::behaviors::{
    registry, within_tolerance, BehaviorError, CalibrationAnalysis, NodeBehavior, NodeContext, ParamView, ScanData,
    ScanPurpose,
};
use crate::classify::{CheckDataOutcome, Classification};
use crate::device::{Device, DeviceError};
use crate::events::{EventKind, EventLog};
use crate::graph::{CalGraph, GraphError, NodeId};
use crate::state::{FailureKind, NodeStatus, StateError, StateStore};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("diagnose on {node} found no out-of-spec dependency (checked: [{}])", join(checked))]
    DiagnoseError { node: NodeId, checked: Vec<NodeId> },
    #[error("calibrate on {node} got bad data: {reason}")]
    BadDataInCalibrate { node: NodeId, reason: String },
    #[error("calibrate on {node} out of tolerance: {}", serde_json::to_string(figures_of_merit).unwrap_or_default())]
    CalibrateFailed {
        node: NodeId,
        figures_of_merit: BTreeMap<String, f64>,
    },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown fault target {0}")]
    UnknownTarget(String),
    #[error("{node} refers to unknown behavior {name:?}")]
    UnknownBehavior { node: NodeId, name: String },
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Graph(GraphError),
}

impl From<GraphError> for EngineError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::UnknownNode(id) => EngineError::UnknownNode(id),
            other => EngineError::Graph(other),
        }
    }
}

impl EngineError {
    /// Short machine-readable name used in logs and exit-code mapping.
    pub fn kind(&self) -> &'static str {
        match self {
            EngineError::DiagnoseError { .. } => "diagnose_error",
            EngineError::BadDataInCalibrate { .. } => "bad_data_in_calibrate",
            EngineError::CalibrateFailed { .. } => "calibrate_failed",
            EngineError::UnknownNode(_) => "unknown_node",
            EngineError::UnknownTarget(_) => "unknown_target",
            EngineError::UnknownBehavior { .. } => "unknown_behavior",
            EngineError::Behavior(BehaviorError::MissingParameter { .. }) => "missing_parameter",
            EngineError::Behavior(_) => "behavior",
            EngineError::State(_) => "state",
            EngineError::Device(_) => "device",
            EngineError::Graph(_) => "graph",
        }
    }
}

fn join(ids: &[NodeId]) -> String {
    ids.iter().map(NodeId::as_str).collect::<Vec<_>>().join(", ")
}

/// Why `check_state` failed.
#[derive(Debug, Clone, PartialEq)]
pub enum StateFailure {
    NeverPassed,
    /// Latest evidence says the node is out of spec.
    NotInSpec,
    TimedOut { age: f64 },
    UnresolvedFailure,
    DependencyRecalibrated { dep: NodeId },
    DependencyFailed { dep: NodeId },
}

impl StateFailure {
    /// Which of the four conditions failed.
    pub fn condition(&self) -> u8 {
        match self {
            StateFailure::NeverPassed | StateFailure::NotInSpec | StateFailure::TimedOut { .. } => 1,
            StateFailure::UnresolvedFailure => 2,
            StateFailure::DependencyRecalibrated { .. } => 3,
            StateFailure::DependencyFailed { .. } => 4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StateFailure::NeverPassed => "never_passed",
            StateFailure::NotInSpec => "not_in_spec",
            StateFailure::TimedOut { .. } => "timed_out",
            StateFailure::UnresolvedFailure => "unresolved_failure",
            StateFailure::DependencyRecalibrated { .. } => "dependency_recalibrated",
            StateFailure::DependencyFailed { .. } => "dependency_failed",
        }
    }

    fn detail(&self) -> Value {
        let mut d = json!({"condition": self.condition(), "reason": self.name()});
        match self {
            StateFailure::TimedOut { age } => d["age_s"] = json!(age),
            StateFailure::DependencyRecalibrated { dep } | StateFailure::DependencyFailed { dep } => {
                d["dependency"] = json!(dep.as_str())
            }
            _ => {}
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckState {
    Pass,
    Fail(StateFailure),
}

impl CheckState {
    pub fn passed(&self) -> bool {
        matches!(self, CheckState::Pass)
    }
}

/// Evaluates the four pass conditions without touching any device.
pub fn check_state(graph: &CalGraph, store: &StateStore, now: f64, id: &NodeId) -> Result<CheckState, EngineError> {
    let mut memo = HashMap::new();
    check_state_memo(graph, store, now, id, &mut memo)
}

fn check_state_memo(
    graph: &CalGraph,
    store: &StateStore,
    now: f64,
    id: &NodeId,
    memo: &mut HashMap<NodeId, CheckState>,
) -> Result<CheckState, EngineError> {
    if let Some(done) = memo.get(id) {
        return Ok(done.clone());
    }
    let spec = graph.spec(id)?;
    let rec = store.record(id)?;
    let fail = CheckState::Fail;
    let result = 'eval: {
        let Some(last) = rec.last_pass_time else {
            break 'eval fail(StateFailure::NeverPassed);
        };
        if !(now - last < spec.timeout) {
            break 'eval fail(StateFailure::TimedOut { age: now - last });
        }
        match rec.status {
            NodeStatus::FailedUnresolved => break 'eval fail(StateFailure::UnresolvedFailure),
            NodeStatus::OutOfSpec | NodeStatus::Unknown => break 'eval fail(StateFailure::NotInSpec),
            NodeStatus::InSpec => {}
        }
        for dep in &spec.dependencies {
            if rec.dep_versions_at_last_pass.get(dep) != Some(&store.cal_version(dep)?) {
                break 'eval fail(StateFailure::DependencyRecalibrated { dep: dep.clone() });
            }
        }
        for dep in &spec.dependencies {
            if !check_state_memo(graph, store, now, dep, memo)?.passed() {
                break 'eval fail(StateFailure::DependencyFailed { dep: dep.clone() });
            }
        }
        CheckState::Pass
    };
    memo.insert(id.clone(), result.clone());
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    CheckStatePass,
    CheckData,
    Calibrate,
    Diagnose,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::CheckStatePass => "check_state_pass",
            Action::CheckData => "check_data",
            Action::Calibrate => "calibrate",
            Action::Diagnose => "diagnose",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaintainReport {
    pub target: NodeId,
    pub visited: Vec<(NodeId, Action)>,
    pub experiments_run: u64,
    pub success: bool,
    /// Virtual seconds spent.
    pub elapsed: f64,
}

impl MaintainReport {
    pub fn count(&self, action: Action) -> usize {
        self.visited.iter().filter(|(_, a)| *a == action).count()
    }

    pub fn nodes_with(&self, action: Action) -> Vec<&NodeId> {
        self.visited.iter().filter(|(_, a)| *a == action).map(|(n, _)| n).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error}")]
pub struct MaintainError {
    pub error: EngineError,
    pub report: MaintainReport,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fault {
    /// Multiplies a stored parameter (our knowledge, not the device).
    CorruptParam { node: NodeId, param: String, factor: f64 },
    /// Every measurement becomes a fair coin.
    FlatlineReadout,
}

fn label(c: Classification) -> &'static str {
    match c {
        Classification::InSpec => "in_spec",
        Classification::OutOfSpec => "out_of_spec",
        Classification::BadData => "bad_data",
    }
}

fn ids_json(ids: &[NodeId]) -> Value {
    json!(ids.iter().map(NodeId::as_str).collect::<Vec<_>>())
}

/// One graph, one store and one device, plus everything recorded while
/// operating on them.
#[derive(Debug, Clone)]
pub struct Session {
    graph: CalGraph,
    store: StateStore,
    device: Device,
    log: EventLog,
    scans: Vec<ScanData>,
    visited: Vec<(NodeId, Action)>,
}

impl Session {
    pub fn new(graph: CalGraph, mut store: StateStore, device: Device) -> Self {
        store.attach(&graph);
        Self {
            graph,
            store,
            device,
            log: EventLog::new(),
            scans: Vec::new(),
            visited: Vec::new(),
        }
    }

    pub fn graph(&self) -> &CalGraph {
        &self.graph
    }

    pub fn store(&self) -> &StateStore {
        &self.store
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn device_mut(&mut self) -> &mut Device {
        &mut self.device
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    /// Every scan taken, in order.
    pub fn scans(&self) -> &[ScanData] {
        &self.scans
    }

    pub fn now(&self) -> f64 {
        self.device.now()
    }

    pub fn advance(&mut self, dt: f64) {
        self.device.advance_and_drift(dt);
    }

    pub fn inject_fault(&mut self, fault: &Fault) -> Result<(), EngineError> {
        match fault {
            Fault::CorruptParam { node, param, factor } => {
                self.store
                    .corrupt_param(node, param, *factor)
                    .map_err(|_| EngineError::UnknownTarget(format!("{node}.{param}")))?;
            }
            Fault::FlatlineReadout => self.device.set_flatline_readout(true),
        }
        Ok(())
    }

    pub fn check_state(&self, id: &NodeId) -> Result<CheckState, EngineError> {
        check_state(&self.graph, &self.store, self.now(), id)
    }

    fn behavior(&self, id: &NodeId) -> Result<&'static dyn NodeBehavior, EngineError> {
        let spec = self.graph.spec(id)?;
        registry(&spec.behavior).ok_or_else(|| EngineError::UnknownBehavior {
            node: id.clone(),
            name: spec.behavior.clone(),
        })
    }

    /// Parameters of the node's ancestors (and optionally its own), later
    /// nodes in topological order shadowing earlier ones.
    pub fn context(&self, id: &NodeId, include_own: bool) -> Result<NodeContext, EngineError> {
        let spec = self.graph.spec(id)?;
        let mut chain: Vec<&NodeId> = self.graph.ancestors(id)?;
        if include_own {
            chain.push(id);
        }
        let mut view = ParamView::new();
        for n in chain {
            let scope = n.as_str().rsplit_once('.').map_or("", |(_, s)| s);
            for (name, value) in self.store.node_params(n) {
                view.set(scope, &name, value);
            }
        }
        let mut ctx = NodeContext::new(id.clone(), view);
        ctx.options = spec.behavior_options.clone();
        Ok(ctx)
    }

    fn run_scan(&mut self, id: &NodeId, ctx: &NodeContext, purpose: ScanPurpose) -> Result<ScanData, EngineError> {
        let behavior = self.behavior(id)?;
        let spec = self.graph.spec(id)?;
        let template = match purpose {
            ScanPurpose::CheckData => spec.check_data_scan.clone(),
            ScanPurpose::Calibrate => spec.calibrate_scan.clone(),
        };
        let (abscissa, experiments) = behavior.experiments(ctx, &template, purpose)?;
        let measured = self.device.execute_scan(&experiments, template.shots_per_point)?;
        let data = ScanData {
            node: id.clone(),
            purpose,
            abscissa,
            experiments,
            measured,
            shots: template.shots_per_point,
        };
        self.scans.push(data.clone());
        Ok(data)
    }

    fn log_check_state(&mut self, id: &NodeId, result: &CheckState) {
        let (outcome, detail) = match result {
            CheckState::Pass => ("pass", json!({})),
            CheckState::Fail(f) => ("fail", f.detail()),
        };
        let t = self.now();
        self.log.push(t, EventKind::CheckState, id.as_str(), outcome, detail);
    }

    fn log_error(&mut self, id: &NodeId, err: &EngineError) {
        let t = self.now();
        self.log.push(t, EventKind::Error, id.as_str(), err.kind(), json!({"message": err.to_string()}));
    }

    /// Runs the small check scan and classifies it.
    pub fn check_data(&mut self, id: &NodeId) -> Result<CheckDataOutcome, EngineError> {
        let behavior = self.behavior(id)?;
        let ctx = self.context(id, true)?;
        let tolerance = self.graph.spec(id)?.tolerance.clone();
        let deps = self.graph.dependencies(id)?.to_vec();
        let data = self.run_scan(id, &ctx, ScanPurpose::CheckData)?;
        let outcome = match behavior.analyze_check(&ctx, &data, &tolerance) {
            Ok(o) => o,
            Err(BehaviorError::Fit(_)) => CheckDataOutcome::bad_data(BTreeMap::new()),
            Err(e) => return Err(e.into()),
        };
        let now = self.now();
        match outcome.classification {
            Classification::InSpec => {
                // only a calibration clears an unresolved failure
                if self.store.record(id)?.status != NodeStatus::FailedUnresolved {
                    self.store.record_pass(id, &deps, now, outcome.figures_of_merit.clone())?;
                }
            }
            Classification::OutOfSpec => self.store.record_failure(id, now, FailureKind::OutOfSpecObserved)?,
            Classification::BadData => self.store.record_failure(id, now, FailureKind::BadDataObserved)?,
        }
        let detail = json!({
            "points": data.measured.len(),
            "shots": data.shots,
            "figures_of_merit": outcome.figures_of_merit,
            "fitted_shift": outcome.fitted_shift,
        });
        self.log
            .push(now, EventKind::CheckData, id.as_str(), label(outcome.classification), detail);
        Ok(outcome)
    }

    /// Runs the full scan and writes new parameters if the figures of merit
    /// are within tolerance.
    pub fn calibrate(&mut self, id: &NodeId) -> Result<BTreeMap<String, f64>, EngineError> {
        let behavior = self.behavior(id)?;
        let ctx = self.context(id, false)?;
        let tolerance = self.graph.spec(id)?.tolerance.clone();
        let deps = self.graph.dependencies(id)?.to_vec();
        let data = self.run_scan(id, &ctx, ScanPurpose::Calibrate)?;
        let analysis = match behavior.analyze_calibrate(&ctx, &data, &tolerance) {
            Ok(a) => a,
            Err(BehaviorError::Fit(e)) => CalibrationAnalysis::BadData { reason: e.to_string() },
            Err(e) => return Err(e.into()),
        };
        let now = self.now();
        match analysis {
            CalibrationAnalysis::BadData { reason } => {
                self.store.record_failure(id, now, FailureKind::BadDataObserved)?;
                self.log
                    .push(now, EventKind::Calibrate, id.as_str(), "bad_data", json!({"reason": reason}));
                let err = EngineError::BadDataInCalibrate { node: id.clone(), reason };
                self.log_error(id, &err);
                Err(err)
            }
            CalibrationAnalysis::Proposed {
                params,
                figures_of_merit,
            } => {
                if !within_tolerance(behavior.tolerance_checks(), &figures_of_merit, &tolerance) {
                    self.store.record_failure(id, now, FailureKind::CalibrateFailed)?;
                    self.log.push(
                        now,
                        EventKind::Calibrate,
                        id.as_str(),
                        "failure",
                        json!({"proposed": params, "figures_of_merit": figures_of_merit}),
                    );
                    let err = EngineError::CalibrateFailed {
                        node: id.clone(),
                        figures_of_merit,
                    };
                    self.log_error(id, &err);
                    return Err(err);
                }
                let old = self.store.node_params(id);
                self.store
                    .record_calibration(id, &deps, now, &params, figures_of_merit.clone())?;
                let version = self.store.cal_version(id)?;
                self.log.push(
                    now,
                    EventKind::Calibrate,
                    id.as_str(),
                    "success",
                    json!({"params": params, "figures_of_merit": figures_of_merit, "cal_version": version}),
                );
                for (name, value) in &params {
                    self.log.push(
                        now,
                        EventKind::ParamUpdate,
                        id.as_str(),
                        name,
                        json!({"old": old.get(name), "new": value, "version": version}),
                    );
                }
                Ok(params)
            }
        }
    }

    /// Brings `id` and its ancestors in spec, taking data only where the
    /// recorded state cannot vouch for a node.
    pub fn maintain(&mut self, id: &NodeId) -> Result<MaintainReport, MaintainError> {
        self.visited.clear();
        let start_experiments = self.device.experiments_run();
        let start_time = self.now();
        let result = if self.graph.contains(id) {
            self.maintain_node(id)
        } else {
            Err(EngineError::UnknownNode(id.clone()))
        };
        let report = MaintainReport {
            target: id.clone(),
            visited: std::mem::take(&mut self.visited),
            experiments_run: self.device.experiments_run() - start_experiments,
            success: result.is_ok(),
            elapsed: self.now() - start_time,
        };
        match result {
            Ok(()) => Ok(report),
            Err(error) => {
                if !matches!(
                    error,
                    EngineError::DiagnoseError { .. }
                        | EngineError::CalibrateFailed { .. }
                        | EngineError::BadDataInCalibrate { .. }
                ) {
                    self.log_error(id, &error);
                }
                Err(MaintainError { error, report })
            }
        }
    }

    fn visit(&mut self, id: &NodeId, action: Action) {
        self.visited.push((id.clone(), action));
    }

    fn never_calibrated(&self, id: &NodeId) -> Result<bool, EngineError> {
        let rec = self.store.record(id)?;
        Ok(rec.cal_version == 0 && rec.last_pass_time.is_none())
    }

    fn maintain_node(&mut self, id: &NodeId) -> Result<(), EngineError> {
        let first = self.check_state(id)?;
        self.log_check_state(id, &first);
        if first.passed() {
            self.visit(id, Action::CheckStatePass);
            return Ok(());
        }
        let deps = self.graph.dependencies(id)?.to_vec();
        for dep in &deps {
            self.maintain_node(dep)?;
        }

        // Nodes that are known to need a calibration skip the check scan:
        // never calibrated, an unresolved failure, or a dependency
        // recalibrated since the last pass.
        let rec = self.store.record(id)?;
        let mut stale = false;
        if rec.last_pass_time.is_some() {
            for d in &deps {
                if rec.dep_versions_at_last_pass.get(d) != Some(&self.store.cal_version(d)?) {
                    stale = true;
                }
            }
        }
        if stale || rec.status == NodeStatus::FailedUnresolved || self.never_calibrated(id)? {
            self.visit(id, Action::Calibrate);
            self.calibrate(id)?;
            return Ok(());
        }

        if matches!(first, CheckState::Fail(StateFailure::DependencyFailed { .. })) {
            let again = self.check_state(id)?;
            self.log_check_state(id, &again);
            if again.passed() {
                self.visit(id, Action::CheckStatePass);
                return Ok(());
            }
        }

        self.visit(id, Action::CheckData);
        match self.check_data(id)?.classification {
            Classification::InSpec => {}
            Classification::OutOfSpec => {
                self.visit(id, Action::Calibrate);
                self.calibrate(id)?;
            }
            Classification::BadData => {
                self.visit(id, Action::Diagnose);
                self.diagnose(id)?;
                self.visit(id, Action::Calibrate);
                self.calibrate(id)?;
            }
        }
        Ok(())
    }

    /// Looks for the dependency responsible for bad data on `id` using
    /// data alone, repairing what it finds. Returns the recalibrated nodes.
    pub fn diagnose(&mut self, id: &NodeId) -> Result<Vec<NodeId>, EngineError> {
        let deps = self.graph.dependencies(id)?.to_vec();
        let t = self.now();
        self.log
            .push(t, EventKind::DiagnoseEnter, id.as_str(), "", json!({"dependencies": ids_json(&deps)}));
        let mut checked = Vec::new();
        let result = self.diagnose_deps(&deps, &mut checked);
        let t = self.now();
        match result {
            Ok(recalibrated) if !recalibrated.is_empty() => {
                self.log.push(
                    t,
                    EventKind::DiagnoseExit,
                    id.as_str(),
                    "repaired",
                    json!({"recalibrated": ids_json(&recalibrated)}),
                );
                Ok(recalibrated)
            }
            Ok(_) => {
                let err = EngineError::DiagnoseError {
                    node: id.clone(),
                    checked: checked.clone(),
                };
                self.log_error(id, &err);
                self.log
                    .push(t, EventKind::DiagnoseExit, id.as_str(), "no_fault_found", json!({"checked": ids_json(&checked)}));
                Err(err)
            }
            Err(e) => {
                self.log
                    .push(t, EventKind::DiagnoseExit, id.as_str(), "aborted", json!({"error": e.kind()}));
                Err(e)
            }
        }
    }

    fn diagnose_deps(&mut self, deps: &[NodeId], checked: &mut Vec<NodeId>) -> Result<Vec<NodeId>, EngineError> {
        let mut recalibrated = Vec::new();
        for d in deps {
            checked.push(d.clone());
            if self.never_calibrated(d)? {
                self.visit(d, Action::Calibrate);
                self.calibrate(d)?;
                recalibrated.push(d.clone());
                continue;
            }
            self.visit(d, Action::CheckData);
            match self.check_data(d)?.classification {
                Classification::InSpec => {}
                Classification::OutOfSpec => {
                    self.visit(d, Action::Calibrate);
                    self.calibrate(d)?;
                    recalibrated.push(d.clone());
                }
                Classification::BadData => {
                    self.visit(d, Action::Diagnose);
                    recalibrated.extend(self.diagnose(d)?);
                    self.visit(d, Action::Calibrate);
                    self.calibrate(d)?;
                    recalibrated.push(d.clone());
                }
            }
        }
        Ok(recalibrated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeSpec;

    fn diamond() -> CalGraph {
        CalGraph::build(vec![
            NodeSpec::bare("A", &[]),
            NodeSpec::bare("B", &["A"]),
            NodeSpec::bare("C", &["A"]),
            NodeSpec::bare("D", &["B", "C"]),
        ])
        .unwrap()
    }

    fn pass_all(g: &CalGraph, store: &mut StateStore, t: f64) {
        for id in g.topological_order() {
            let deps = g.dependencies(id).unwrap().to_vec();
            store.record_pass(id, &deps, t, BTreeMap::new()).unwrap();
        }
    }

    fn id(s: &str) -> NodeId {
        NodeId::new(s)
    }

    #[test]
    fn never_measured_fails_condition_one() {
        let g = diamond();
        let store = StateStore::for_graph(&g);
        let r = check_state(&g, &store, 0.0, &id("A")).unwrap();
        assert_eq!(r, CheckState::Fail(StateFailure::NeverPassed));
    }

    #[test]
    fn fresh_nodes_pass_and_timeout_is_strict() {
        let g = diamond();
        let mut store = StateStore::for_graph(&g);
        pass_all(&g, &mut store, 0.0);
        assert!(check_state(&g, &store, 50.0, &id("D")).unwrap().passed());
        // bare specs use a 3600 s timeout
        let at_boundary = check_state(&g, &store, 3600.0, &id("A")).unwrap();
        assert!(matches!(at_boundary, CheckState::Fail(StateFailure::TimedOut { .. })));
        assert!(check_state(&g, &store, 3599.999, &id("A")).unwrap().passed());
    }

    #[test]
    fn recalibrated_dependency_fails_condition_three() {
        let g = diamond();
        let mut store = StateStore::for_graph(&g);
        pass_all(&g, &mut store, 0.0);
        store
            .record_calibration(&id("B"), &[id("A")], 5.0, &BTreeMap::from([("x".to_string(), 1.0)]), BTreeMap::new())
            .unwrap();
        let r = check_state(&g, &store, 6.0, &id("D")).unwrap();
        assert_eq!(r, CheckState::Fail(StateFailure::DependencyRecalibrated { dep: id("B") }));
        assert_eq!(
            check_state(&g, &store, 6.0, &id("B")).unwrap(),
            CheckState::Pass
        );
    }

    #[test]
    fn failing_ancestor_fails_condition_four() {
        let g = diamond();
        let mut store = StateStore::for_graph(&g);
        pass_all(&g, &mut store, 0.0);
        store.record_failure(&id("A"), 1.0, FailureKind::CalibrateFailed).unwrap();
        assert_eq!(
            check_state(&g, &store, 2.0, &id("A")).unwrap(),
            CheckState::Fail(StateFailure::UnresolvedFailure)
        );
        let r = check_state(&g, &store, 2.0, &id("D")).unwrap();
        assert_eq!(r, CheckState::Fail(StateFailure::DependencyFailed { dep: id("B") }));
        assert_eq!(r.clone(), r);
        match r {
            CheckState::Fail(f) => assert_eq!(f.condition(), 4),
            CheckState::Pass => unreachable!(),
        }
    }

    #[test]
    fn unknown_node_is_an_error() {
        let g = diamond();
        let store = StateStore::for_graph(&g);
        assert_eq!(
            check_state(&g, &store, 0.0, &id("Z")),
            Err(EngineError::UnknownNode(id("Z")))
        );
    }
}
