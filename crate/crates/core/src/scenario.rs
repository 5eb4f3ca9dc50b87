//! Line-oriented scenario scripts driving one session.
//!
//! ```text
//! # comment
//! maintain two_qubit_phase.q0-q1
//! advance-past-timeout rabi_fine.q0
//! jump q0.f_q_ghz 0.003
//! fault corrupt spectroscopy.q0 f_drive 1.02
//! fault flatline_readout
//! maintain rabi_fine.q0 expect diagnose_error
//! assert last.calibrates == 0
//! assert status rabi_fine.q0 == in_spec
//! assert check_state two_qubit_phase.q0-q1 == condition_3
//! assert all_pass
//! ```

use std::fmt;

use thiserror::Error;

use crate::engine::{Action, CheckState, EngineError, Fault, MaintainReport, Session};
use crate::events::EventKind;
use crate::graph::NodeId;
use crate::state::NodeStatus;

/// Margin added when advancing past a timeout, in seconds.
const PAST_TIMEOUT_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Cmp {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "==" => Cmp::Eq,
            "!=" => Cmp::Ne,
            "<" => Cmp::Lt,
            "<=" => Cmp::Le,
            ">" => Cmp::Gt,
            ">=" => Cmp::Ge,
            _ => return None,
        })
    }

    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Cmp::Eq => a == b,
            Cmp::Ne => a != b,
            Cmp::Lt => a < b,
            Cmp::Le => a <= b,
            Cmp::Gt => a > b,
            Cmp::Ge => a >= b,
        }
    }
}

impl fmt::Display for Cmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cmp::Eq => "==",
            Cmp::Ne => "!=",
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Assertion {
    /// `last.<counter> <cmp> <n>` over the most recent maintain report.
    Counter { name: String, cmp: Cmp, value: f64 },
    Status { node: NodeId, expected: String },
    /// Expected is `pass`, `fail` or `condition_<n>`.
    CheckState { node: NodeId, expected: String },
    AllPass,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Advance(f64),
    AdvancePastTimeout(NodeId),
    Jump { param: String, delta: f64 },
    Fault(Fault),
    Maintain { node: NodeId, expect: Option<String> },
    Calibrate(NodeId),
    CheckData(NodeId),
    Assert(Assertion),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// (line number, step)
    pub steps: Vec<(usize, Step)>,
}

fn number(line: usize, s: &str) -> Result<f64, ParseError> {
    s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| ParseError {
        line,
        message: format!("expected a number, got {s:?}"),
    })
}

const COUNTERS: [&str; 5] = ["experiments", "calibrates", "check_data", "diagnoses", "check_state_passes"];
const EXPECTATIONS: [&str; 5] = ["ok", "diagnose_error", "calibrate_failed", "bad_data_in_calibrate", "error"];

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut steps = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            let err = |message: String| ParseError { line, message };
            let step = match words.as_slice() {
                ["advance", dt] => {
                    let dt = number(line, dt)?;
                    if dt < 0.0 {
                        return Err(err("cannot advance by a negative time".into()));
                    }
                    Step::Advance(dt)
                }
                ["advance-past-timeout", node] => Step::AdvancePastTimeout(NodeId::new(*node)),
                ["jump", param, delta] => Step::Jump {
                    param: (*param).to_owned(),
                    delta: number(line, delta)?,
                },
                ["fault", "corrupt", node, param, factor] => Step::Fault(Fault::CorruptParam {
                    node: NodeId::new(*node),
                    param: (*param).to_owned(),
                    factor: number(line, factor)?,
                }),
                ["fault", "flatline_readout"] => Step::Fault(Fault::FlatlineReadout),
                ["maintain", node] => Step::Maintain {
                    node: NodeId::new(*node),
                    expect: None,
                },
                ["maintain", node, "expect", kind] => {
                    if !EXPECTATIONS.contains(kind) {
                        return Err(err(format!("unknown expectation {kind:?}")));
                    }
                    Step::Maintain {
                        node: NodeId::new(*node),
                        expect: Some((*kind).to_owned()),
                    }
                }
                ["calibrate", node] => Step::Calibrate(NodeId::new(*node)),
                ["check_data", node] => Step::CheckData(NodeId::new(*node)),
                ["assert", "all_pass"] => Step::Assert(Assertion::AllPass),
                ["assert", "status", node, "==", expected] => Step::Assert(Assertion::Status {
                    node: NodeId::new(*node),
                    expected: (*expected).to_owned(),
                }),
                ["assert", "check_state", node, "==", expected] => Step::Assert(Assertion::CheckState {
                    node: NodeId::new(*node),
                    expected: (*expected).to_owned(),
                }),
                ["assert", counter, cmp, value] if counter.starts_with("last.") => {
                    let name = &counter["last.".len()..];
                    if !COUNTERS.contains(&name) {
                        return Err(err(format!("unknown counter {name:?}")));
                    }
                    Step::Assert(Assertion::Counter {
                        name: name.to_owned(),
                        cmp: Cmp::parse(cmp).ok_or_else(|| err(format!("unknown comparison {cmp:?}")))?,
                        value: number(line, value)?,
                    })
                }
                _ => return Err(err(format!("cannot parse step {content:?}"))),
            };
            steps.push((line, step));
        }
        Ok(Self { steps })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioOutcome {
    Completed,
    /// `step` counts steps from 1, ignoring comments and blank lines.
    AssertFailed { step: usize, line: usize, message: String },
    Failed { step: usize, line: usize, error: EngineError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub outcome: ScenarioOutcome,
    pub maintains: Vec<MaintainReport>,
}

fn status_name(s: NodeStatus) -> &'static str {
    match s {
        NodeStatus::InSpec => "in_spec",
        NodeStatus::OutOfSpec => "out_of_spec",
        NodeStatus::Unknown => "unknown",
        NodeStatus::FailedUnresolved => "failed_unresolved",
    }
}

fn counter(report: &MaintainReport, name: &str) -> f64 {
    match name {
        "experiments" => report.experiments_run as f64,
        "calibrates" => report.count(Action::Calibrate) as f64,
        "check_data" => report.count(Action::CheckData) as f64,
        "diagnoses" => report.count(Action::Diagnose) as f64,
        "check_state_passes" => report.count(Action::CheckStatePass) as f64,
        _ => f64::NAN,
    }
}

fn evaluate(session: &Session, last: Option<&MaintainReport>, a: &Assertion) -> Result<Option<String>, EngineError> {
    Ok(match a {
        Assertion::Counter { name, cmp, value } => match last {
            None => Some("no maintain has run yet".into()),
            Some(r) => {
                let actual = counter(r, name);
                (!cmp.holds(actual, *value)).then(|| format!("last.{name} is {actual}, expected {cmp} {value}"))
            }
        },
        Assertion::Status { node, expected } => {
            let actual = status_name(session.store().record(node)?.status);
            (actual != expected).then(|| format!("status of {node} is {actual}, expected {expected}"))
        }
        Assertion::CheckState { node, expected } => {
            let result = session.check_state(node)?;
            let actual = match &result {
                CheckState::Pass => "pass".to_string(),
                CheckState::Fail(f) => format!("condition_{}", f.condition()),
            };
            let ok = match expected.as_str() {
                "fail" => !result.passed(),
                e => e == actual,
            };
            (!ok).then(|| format!("check_state {node} is {actual}, expected {expected}"))
        }
        Assertion::AllPass => {
            let mut failing = Vec::new();
            for id in session.graph().ids() {
                if !session.check_state(id)?.passed() {
                    failing.push(id.as_str().to_owned());
                }
            }
            (!failing.is_empty()).then(|| format!("failing check_state: {}", failing.join(", ")))
        }
    })
}

impl Scenario {
    /// Runs every step in order, stopping at the first failed assertion or
    /// unexpected engine error.
    pub fn run(&self, session: &mut Session) -> ScenarioReport {
        let mut maintains: Vec<MaintainReport> = Vec::new();
        for (index, (line, step)) in self.steps.iter().enumerate() {
            let step_no = index + 1;
            let failed = |error: EngineError| ScenarioOutcome::Failed {
                step: step_no,
                line: *line,
                error,
            };
            let result: Result<(), ScenarioOutcome> = match step {
                Step::Advance(dt) => {
                    session.advance(*dt);
                    Ok(())
                }
                Step::AdvancePastTimeout(node) => match (session.graph().spec(node), session.store().record(node)) {
                    (Ok(spec), Ok(rec)) => {
                        let last = rec.last_pass_time.unwrap_or(session.now());
                        let dt = (last + spec.timeout + PAST_TIMEOUT_MARGIN - session.now()).max(0.0);
                        session.advance(dt);
                        Ok(())
                    }
                    _ => Err(failed(EngineError::UnknownNode(node.clone()))),
                },
                Step::Jump { param, delta } => session
                    .device_mut()
                    .shift_param(param, *delta)
                    .map_err(|e| failed(e.into())),
                Step::Fault(f) => session.inject_fault(f).map_err(failed),
                Step::Maintain { node, expect } => {
                    let (report, error) = match session.maintain(node) {
                        Ok(r) => (r, None),
                        Err(e) => (e.report, Some(e.error)),
                    };
                    maintains.push(report);
                    match (expect.as_deref(), error) {
                        (None | Some("ok"), None) => Ok(()),
                        (None, Some(e)) => Err(failed(e)),
                        (Some("error"), Some(_)) => Ok(()),
                        (Some(kind), Some(e)) if e.kind() == kind => Ok(()),
                        (Some(kind), got) => Err(ScenarioOutcome::AssertFailed {
                            step: step_no,
                            line: *line,
                            message: format!(
                                "maintain {node}: expected {kind}, got {}",
                                got.map_or("ok".to_string(), |e| e.kind().to_string())
                            ),
                        }),
                    }
                }
                Step::Calibrate(node) => session.calibrate(node).map(|_| ()).map_err(failed),
                Step::CheckData(node) => session.check_data(node).map(|_| ()).map_err(failed),
                Step::Assert(a) => match evaluate(session, maintains.last(), a) {
                    Ok(None) => Ok(()),
                    Ok(Some(message)) => Err(ScenarioOutcome::AssertFailed {
                        step: step_no,
                        line: *line,
                        message,
                    }),
                    Err(e) => Err(failed(e)),
                },
            };
            if let Err(outcome) = result {
                return ScenarioReport { outcome, maintains };
            }
        }
        ScenarioReport {
            outcome: ScenarioOutcome::Completed,
            maintains,
        }
    }
}

/// Number of check_state events between each diagnose_enter and its
/// matching diagnose_exit in the session log.
pub fn check_states_inside_diagnose(session: &Session) -> usize {
    let mut depth = 0usize;
    let mut count = 0;
    for e in session.log().events() {
        match e.event {
            EventKind::DiagnoseEnter => depth += 1,
            EventKind::DiagnoseExit => depth = depth.saturating_sub(1),
            EventKind::CheckState if depth > 0 => count += 1,
            _ => {}
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_step_kind() {
        let text = "\
# bring-up
maintain two_qubit_phase.q0-q1
advance 10
advance-past-timeout rabi_fine.q0   # trailing comment
jump q0.f_q_ghz 0.003
fault corrupt spectroscopy.q0 f_drive 1.02
fault flatline_readout
maintain rabi_fine.q0 expect diagnose_error
calibrate rabi_coarse.q1
check_data rabi_coarse.q1
assert last.calibrates == 0
assert status rabi_fine.q0 == in_spec
assert check_state two_qubit_phase.q0-q1 == condition_3
assert all_pass
";
        let s = Scenario::parse(text).unwrap();
        assert_eq!(s.steps.len(), 13);
        assert_eq!(s.steps[0].0, 2);
        assert_eq!(s.steps[1].1, Step::Advance(10.0));
    }

    #[test]
    fn empty_script_has_no_steps() {
        assert!(Scenario::parse("").unwrap().steps.is_empty());
        assert!(Scenario::parse("# nothing\n\n").unwrap().steps.is_empty());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = Scenario::parse("advance 1\nwiggle q0\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert_eq!(Scenario::parse("advance -3").unwrap_err().line, 1);
        assert!(Scenario::parse("assert last.bogus == 1").is_err());
        assert!(Scenario::parse("maintain a expect maybe").is_err());
    }
}
