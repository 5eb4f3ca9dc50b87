//! Browser demo: three operations on the shipped graph and simulated device,
//! each returning a JSON string for the page in `www/`.
//!
//! The plain functions are usable natively; the `wasm` module wraps them
//! for `wasm-bindgen` when building for `wasm32`.

use calgraph_core::behaviors::registry;
use calgraph_core::config::{parse_device, parse_graph, EXAMPLE_DEVICE, EXAMPLE_GRAPH};
use calgraph_core::device::Device;
use calgraph_core::engine::Session;
use calgraph_core::graph::NodeId;
use calgraph_core::state::StateStore;
use serde_json::{json, Value};

const TARGET: &str = "two_qubit_phase.q0-q1";

fn session(seed: u64) -> Result<Session, String> {
    let graph = parse_graph(EXAMPLE_GRAPH).map_err(|e| e.to_string())?;
    let mut cfg = parse_device(EXAMPLE_DEVICE).map_err(|e| e.to_string())?;
    cfg.seed = seed;
    let device = Device::from_config(&cfg).map_err(|e| e.to_string())?;
    let store = StateStore::for_graph(&graph);
    Ok(Session::new(graph, store, device))
}

fn brought_up(seed: u64) -> Result<Session, String> {
    let mut s = session(seed)?;
    s.maintain(&NodeId::new(TARGET)).map_err(|e| e.to_string())?;
    Ok(s)
}

fn nodes(s: &Session) -> Value {
    s.graph()
        .topological_order()
        .into_iter()
        .map(|id| {
            let rec = s.store().record(id).expect("graph node has a record");
            json!({
                "id": id.as_str(),
                "deps": s.graph().dependencies(id).unwrap_or(&[]).iter().map(NodeId::as_str).collect::<Vec<_>>(),
                "status": rec.status,
                "version": rec.cal_version,
                "check_state": s.check_state(id).map(|c| c.passed()).unwrap_or(false),
                "params": s.store().node_params(id),
            })
        })
        .collect()
}

/// Calibrates the whole graph from scratch.
pub fn bring_up(seed: u64) -> Result<String, String> {
    let mut s = session(seed)?;
    let report = s.maintain(&NodeId::new(TARGET)).map_err(|e| e.to_string())?;
    Ok(json!({
        "experiments": report.experiments_run,
        "virtual_s": report.elapsed,
        "nodes": nodes(&s),
        "events": s.log().events(),
    })
    .to_string())
}

/// After bring-up, scales the true Rabi rate of `q0` by
/// `1 + rate_offset_pct / 100` and runs the check scan of `node`. Returns
/// the data, the curve expected from stored parameters and the verdict.
pub fn rabi_check(node: &str, rate_offset_pct: f64, seed: u64) -> Result<String, String> {
    let mut s = brought_up(seed)?;
    let id = NodeId::new(node);
    let spec = s.graph().spec(&id).map_err(|e| e.to_string())?.clone();
    let rate = s.device().param("q0.rabi_rate_mhz").map_err(|e| e.to_string())?;
    s.device_mut()
        .shift_param("q0.rabi_rate_mhz", rate * rate_offset_pct / 100.0)
        .map_err(|e| e.to_string())?;
    let outcome = s.check_data(&id).map_err(|e| e.to_string())?;
    let scan = s.scans().last().ok_or("no scan recorded")?.clone();
    let behavior = registry(&spec.behavior).ok_or("unknown behavior")?;
    let ctx = s.context(&id, true).map_err(|e| e.to_string())?;
    let expected = behavior.expected_curve(&ctx, &scan.experiments).map_err(|e| e.to_string())?;
    Ok(json!({
        "node": node,
        "x": scan.abscissa,
        "measured": scan.measured,
        "expected": expected,
        "shots": scan.shots,
        "classification": outcome.classification,
        "figures_of_merit": outcome.figures_of_merit,
        "fitted_shift": outcome.fitted_shift,
        "tolerance": spec.tolerance,
    })
    .to_string())
}

/// After bring-up, moves the true frequency of `q0` by `jump_mhz`, waits
/// `wait_s` virtual seconds and maintains the pair node again.
pub fn drift_and_maintain(jump_mhz: f64, wait_s: f64, seed: u64) -> Result<String, String> {
    let mut s = brought_up(seed)?;
    let start = s.log().len();
    s.device_mut()
        .shift_param("q0.f_q_ghz", jump_mhz * 1e-3)
        .map_err(|e| e.to_string())?;
    s.advance(wait_s.max(0.0));
    let stale: Vec<String> = s
        .graph()
        .ids()
        .filter(|id| !s.check_state(id).map(|c| c.passed()).unwrap_or(false))
        .map(|id| id.to_string())
        .collect();
    let (report, error) = match s.maintain(&NodeId::new(TARGET)) {
        Ok(r) => (r, None),
        Err(e) => (e.report, Some(e.error.to_string())),
    };
    let visited: Vec<Value> = report
        .visited
        .iter()
        .map(|(n, a)| json!([n.as_str(), a.to_string()]))
        .collect();
    Ok(json!({
        "stale_before": stale,
        "visited": visited,
        "experiments": report.experiments_run,
        "virtual_s": report.elapsed,
        "success": report.success,
        "error": error,
        "nodes": nodes(&s),
        "events": s.log().since(start),
    })
    .to_string())
}

#[cfg(target_arch = "wasm32")]
mod wasm {
    use wasm_bindgen::prelude::*;

    #[wasm_bindgen]
    pub fn bring_up(seed: u32) -> Result<String, JsError> {
        super::bring_up(u64::from(seed)).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen]
    pub fn rabi_check(node: &str, rate_offset_pct: f64, seed: u32) -> Result<String, JsError> {
        super::rabi_check(node, rate_offset_pct, u64::from(seed)).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen]
    pub fn drift_and_maintain(jump_mhz: f64, wait_s: f64, seed: u32) -> Result<String, JsError> {
        super::drift_and_maintain(jump_mhz, wait_s, u64::from(seed)).map_err(|e| JsError::new(&e))
    }
}
