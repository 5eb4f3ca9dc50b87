//! Node behaviors: how each kind of calibration builds its scans and
//! analyzes the resulting data.
//!
//! A graph config refers to behaviors by name. New kinds of calibration
//! plug in by implementing [`NodeBehavior`] and adding an entry to
//! [`registry`].

pub mod readout;
pub mod rabi;
pub mod spectroscopy;
pub mod two_qubit;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::classify::CheckDataOutcome;
use crate::device::Experiment;
use crate::fit::FitError;
use crate::graph::{NodeId, ScanTemplate};

pub use rabi::{RabiAmplified, RabiCoarse};
pub use readout::ReadoutThreshold;
pub use spectroscopy::Spectroscopy;
pub use two_qubit::TwoQubitPhase;

/// Multiple of the expected shot noise above which a residual is
/// considered inconsistent with the model.
pub const NOISE_MULTIPLE: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BehaviorError {
    #[error("{node} needs parameter {name} for {scope}")]
    MissingParameter { node: NodeId, scope: String, name: String },
    #[error("{node}: {reason}")]
    InvalidNode { node: NodeId, reason: String },
    #[error("fit failed: {0}")]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanPurpose {
    CheckData,
    Calibrate,
}

/// Measured data for one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanData {
    pub node: NodeId,
    pub purpose: ScanPurpose,
    /// Abscissa per point in the units of the scan template after
    /// resolution (ns, GHz, threshold units).
    pub abscissa: Vec<f64>,
    pub experiments: Vec<Experiment>,
    /// Fraction of `1` outcomes per point.
    pub measured: Vec<f64>,
    pub shots: u32,
}

impl ScanData {
    /// Two-column text: abscissa and measured probability.
    pub fn to_columns(&self) -> String {
        let mut s = String::new();
        for (x, y) in self.abscissa.iter().zip(&self.measured) {
            s.push_str(&format!("{x} {y}\n"));
        }
        s
    }
}

/// Parameters visible to a node: its own stored values and those of its
/// ancestors, keyed by qubit scope (`q0`, `q0-q1`) and parameter name.
/// Closer nodes shadow further ones for the same key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamView {
    values: BTreeMap<(String, String), f64>,
}

impl ParamView {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, scope: &str, name: &str, value: f64) {
        self.values.insert((scope.to_owned(), name.to_owned()), value);
    }

    pub fn get(&self, scope: &str, name: &str) -> Option<f64> {
        self.values.get(&(scope.to_owned(), name.to_owned())).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.values.iter().map(|((s, n), v)| (s.as_str(), n.as_str(), *v))
    }
}

/// Everything a behavior may read when building or analyzing a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeContext {
    pub node: NodeId,
    pub params: ParamView,
    pub options: BTreeMap<String, f64>,
}

impl NodeContext {
    pub fn new(node: NodeId, params: ParamView) -> Self {
        Self {
            node,
            params,
            options: BTreeMap::new(),
        }
    }

    /// Qubit scope of the node's own parameters: the id suffix.
    pub fn scope(&self) -> &str {
        self.node.as_str().rsplit_once('.').map_or("", |(_, s)| s)
    }

    pub fn qubits(&self) -> Vec<&str> {
        self.node.qubits()
    }

    pub fn param(&self, scope: &str, name: &str) -> Result<f64, BehaviorError> {
        self.params
            .get(scope, name)
            .ok_or_else(|| BehaviorError::MissingParameter {
                node: self.node.clone(),
                scope: scope.to_owned(),
                name: name.to_owned(),
            })
    }

    pub fn option(&self, name: &str, default: f64) -> f64 {
        self.options.get(name).copied().unwrap_or(default)
    }

    /// A copy with one parameter replaced, used to evaluate hypotheses.
    pub fn with_param(&self, scope: &str, name: &str, value: f64) -> Self {
        let mut c = self.clone();
        c.params.set(scope, name, value);
        c
    }

    /// The only qubit of a single-qubit node.
    pub fn single_qubit(&self) -> Result<String, BehaviorError> {
        match self.qubits().as_slice() {
            [q] => Ok((*q).to_owned()),
            _ => Err(BehaviorError::InvalidNode {
                node: self.node.clone(),
                reason: "expected a single-qubit node id like name.q0".into(),
            }),
        }
    }
}

/// Readout discrimination as estimated by the readout calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutModel {
    pub threshold: f64,
    /// P(read 1 | qubit in |0⟩).
    pub p1_given_0: f64,
    /// P(read 1 | qubit in |1⟩).
    pub p1_given_1: f64,
}

impl ReadoutModel {
    pub fn from_context(ctx: &NodeContext, qubit: &str) -> Result<Self, BehaviorError> {
        let threshold = ctx.param(qubit, readout::THRESHOLD)?;
        let c0 = ctx.param(qubit, readout::CENTER_0)?;
        let c1 = ctx.param(qubit, readout::CENTER_1)?;
        let sigma = ctx.param(qubit, readout::SIGMA)?;
        Ok(Self {
            threshold,
            p1_given_0: readout::one_probability(threshold, c0, sigma),
            p1_given_1: readout::one_probability(threshold, c1, sigma),
        })
    }

    /// Expected fraction of `1` outcomes for excited population `p`.
    pub fn measured(&self, p: f64) -> f64 {
        self.p1_given_0 + (self.p1_given_1 - self.p1_given_0) * p
    }

    pub fn contrast(&self) -> f64 {
        self.p1_given_1 - self.p1_given_0
    }
}

/// Five times the binomial shot noise at the mean measured probability.
pub fn noise_threshold(measured: &[f64], shots: u32) -> f64 {
    let shots = f64::from(shots.max(1));
    let mean = measured.iter().sum::<f64>() / measured.len().max(1) as f64;
    let var = (mean * (1.0 - mean)).max(1.0 / shots);
    NOISE_MULTIPLE * (var / shots).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    /// Figure of merit must not exceed the tolerance.
    Max,
    /// Figure of merit must reach at least the tolerance.
    Min,
}

/// Links a tolerance key in the graph config to a figure of merit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceCheck {
    pub tolerance: &'static str,
    pub figure_of_merit: &'static str,
    pub bound: Bound,
}

/// True when every figure of merit present in `foms` that has a tolerance
/// check satisfies it.
pub fn within_tolerance(checks: &[ToleranceCheck], foms: &BTreeMap<String, f64>, tolerance: &BTreeMap<String, f64>) -> bool {
    checks.iter().all(|c| {
        let (Some(&value), Some(&limit)) = (foms.get(c.figure_of_merit), tolerance.get(c.tolerance)) else {
            return true;
        };
        match c.bound {
            Bound::Max => value <= limit,
            Bound::Min => value >= limit,
        }
    })
}

/// The parameter a check scan is allowed to move when refitting, and the
/// window it may move in.
#[derive(Debug, Clone, PartialEq)]
pub struct RefitTarget {
    pub scope: String,
    pub name: &'static str,
    pub current: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Result of analyzing a calibration scan.
#[derive(Debug, Clone, PartialEq)]
pub enum CalibrationAnalysis {
    Proposed {
        params: BTreeMap<String, f64>,
        figures_of_merit: BTreeMap<String, f64>,
    },
    BadData { reason: String },
}

pub trait NodeBehavior: Send + Sync {
    fn name(&self) -> &'static str;

    /// Parameters written by a successful calibration.
    fn parameters(&self) -> &'static [&'static str];

    fn tolerance_checks(&self) -> &'static [ToleranceCheck];

    /// Turns a scan template into concrete experiments. Returns the
    /// abscissa per experiment alongside.
    fn experiments(
        &self,
        ctx: &NodeContext,
        scan: &ScanTemplate,
        purpose: ScanPurpose,
    ) -> Result<(Vec<f64>, Vec<Experiment>), BehaviorError>;

    /// Predicted fraction of `1` outcomes if the node's parameters in `ctx`
    /// were exactly right.
    fn expected_curve(&self, ctx: &NodeContext, experiments: &[Experiment]) -> Result<Vec<f64>, BehaviorError>;

    fn refit_target(&self, ctx: &NodeContext) -> Result<RefitTarget, BehaviorError>;

    /// Figure of merit comparing a refit value with the stored one.
    fn deviation(&self, current: f64, fitted: f64) -> (&'static str, f64);

    fn analyze_check(
        &self,
        ctx: &NodeContext,
        data: &ScanData,
        tolerance: &BTreeMap<String, f64>,
    ) -> Result<CheckDataOutcome, BehaviorError> {
        crate::classify::classify_check_data(self, ctx, data, tolerance)
    }

    fn analyze_calibrate(
        &self,
        ctx: &NodeContext,
        data: &ScanData,
        tolerance: &BTreeMap<String, f64>,
    ) -> Result<CalibrationAnalysis, BehaviorError>;
}

static READOUT: ReadoutThreshold = ReadoutThreshold;
static SPECTROSCOPY: Spectroscopy = Spectroscopy;
static RABI_COARSE: RabiCoarse = RabiCoarse;
static RABI_FINE: RabiAmplified = RabiAmplified;
static TWO_QUBIT: TwoQubitPhase = TwoQubitPhase;

/// Names accepted in the `behavior` field of a graph config.
pub const BEHAVIOR_NAMES: [&str; 5] = [
    "readout_threshold",
    "spectroscopy",
    "rabi_coarse",
    "rabi_fine",
    "two_qubit_phase",
];

pub fn registry(name: &str) -> Option<&'static dyn NodeBehavior> {
    Some(match name {
        "readout_threshold" => &READOUT,
        "spectroscopy" => &SPECTROSCOPY,
        "rabi_coarse" => &RABI_COARSE,
        "rabi_fine" => &RABI_FINE,
        "two_qubit_phase" => &TWO_QUBIT,
        _ => return None,
    })
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_knows_every_name() {
        for name in BEHAVIOR_NAMES {
            assert_eq!(registry(name).unwrap().name(), name);
        }
        assert!(registry("ramsey").is_none());
    }

    #[test]
    fn tolerance_directions() {
        let checks = [
            ToleranceCheck {
                tolerance: "max_err",
                figure_of_merit: "err",
                bound: Bound::Max,
            },
            ToleranceCheck {
                tolerance: "min_fid",
                figure_of_merit: "fid",
                bound: Bound::Min,
            },
        ];
        let tol = BTreeMap::from([("max_err".to_string(), 0.1), ("min_fid".to_string(), 0.9)]);
        let ok = BTreeMap::from([("err".to_string(), 0.05), ("fid".to_string(), 0.95)]);
        let bad = BTreeMap::from([("err".to_string(), 0.05), ("fid".to_string(), 0.5)]);
        assert!(within_tolerance(&checks, &ok, &tol));
        assert!(!within_tolerance(&checks, &bad, &tol));
        assert!(within_tolerance(&checks, &BTreeMap::new(), &tol));
    }

    #[test]
    fn noise_threshold_scales_with_shots() {
        let a = noise_threshold(&[0.5; 5], 10_000);
        assert!((a - 5.0 * 0.005).abs() < 1e-12);
        assert!(noise_threshold(&[0.0; 5], 100) > 0.0);
    }
}
