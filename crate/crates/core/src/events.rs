//! Session event log, one JSON object per line.

use std::fmt;

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    CheckState,
    CheckData,
    Calibrate,
    DiagnoseEnter,
    DiagnoseExit,
    ParamUpdate,
    Error,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventKind::CheckState => "check_state",
            EventKind::CheckData => "check_data",
            EventKind::Calibrate => "calibrate",
            EventKind::DiagnoseEnter => "diagnose_enter",
            EventKind::DiagnoseExit => "diagnose_exit",
            EventKind::ParamUpdate => "param_update",
            EventKind::Error => "error",
        };
        f.write_str(s)
    }
}

/// Field order here is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub event: EventKind,
    pub node: String,
    pub outcome: String,
    pub detail: Value,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, event: EventKind, node: &str, outcome: &str, detail: Value) {
        self.events.push(Event {
            t,
            event,
            node: node.to_owned(),
            outcome: outcome.to_owned(),
            detail,
        });
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events from index `from` on.
    pub fn since(&self, from: usize) -> &[Event] {
        &self.events[from.min(self.events.len())..]
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.event == kind).count()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn key_order_is_fixed() {
        let mut log = EventLog::new();
        log.push(1.5, EventKind::CheckData, "rabi_fine.q0", "in_spec", json!({"b": 1, "a": 2}));
        assert_eq!(
            log.to_jsonl(),
            "{\"t\":1.5,\"event\":\"check_data\",\"node\":\"rabi_fine.q0\",\"outcome\":\"in_spec\",\"detail\":{\"a\":2,\"b\":1}}\n"
        );
        assert_eq!(log.count(EventKind::CheckData), 1);
        assert_eq!(EventKind::DiagnoseExit.to_string(), "diagnose_exit");
    }
}
