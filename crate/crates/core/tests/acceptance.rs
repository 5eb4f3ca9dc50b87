//! End-to-end acceptance run on the shipped 11-node graph and device.
//!
//! Prints one `PASS`/`FAIL` line per criterion and exits non-zero if any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use calgraph_core::behaviors::{
    readout, registry, rabi, spectroscopy, two_qubit, CalibrationAnalysis, NodeContext, ParamView, ScanData,
    ScanPurpose,
};
use calgraph_core::classify::Classification;
use calgraph_core::config::{parse_device, parse_graph, EXAMPLE_DEVICE, EXAMPLE_GRAPH};
use calgraph_core::device::{Device, DeviceConfig};
use calgraph_core::engine::{Action, CheckState, EngineError, Fault, Session};
use calgraph_core::events::EventKind;
use calgraph_core::graph::{CalGraph, NodeId, NodeSpec};
use calgraph_core::scenario::check_states_inside_diagnose;
use calgraph_core::state::{NodeStatus, StateStore};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TARGET: &str = "two_qubit_phase.q0-q1";
const ROTATION_BUDGET_RAD: f64 = 1e-3;
const BRINGUP_LIMIT: Duration = Duration::from_secs(10);
const TOTAL_LIMIT: Duration = Duration::from_secs(60);

type Verdict = Result<String, String>;

fn id(s: &str) -> NodeId {
    NodeId::new(s)
}

fn fresh_session() -> Session {
    let graph = parse_graph(EXAMPLE_GRAPH).unwrap();
    let device = Device::from_config(&parse_device(EXAMPLE_DEVICE).unwrap()).unwrap();
    let store = StateStore::for_graph(&graph);
    Session::new(graph, store, device)
}

fn brought_up() -> Session {
    let mut s = fresh_session();
    s.maintain(&id(TARGET)).expect("bring-up");
    s
}

fn advance_past_timeout(s: &mut Session, node: &str) {
    let n = id(node);
    let last = s.store().record(&n).unwrap().last_pass_time.unwrap();
    let timeout = s.graph().spec(&n).unwrap().timeout;
    let dt = last + timeout + 1.0 - s.now();
    s.advance(dt);
}

fn all_in_spec(s: &Session) -> Vec<String> {
    s.store()
        .records()
        .filter(|(_, r)| r.status != NodeStatus::InSpec)
        .map(|(n, r)| format!("{n}={:?}", r.status))
        .collect()
}

fn failing_check_state(s: &Session) -> Vec<String> {
    s.graph()
        .ids()
        .filter(|n| !s.check_state(n).unwrap().passed())
        .map(|n| n.to_string())
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion_1(logs: &mut Vec<String>) -> Verdict {
    let mut s = fresh_session();
    let t0 = Instant::now();
    let report = s.maintain(&id(TARGET)).map_err(|e| format!("maintain failed: {e}"))?;
    let wall = t0.elapsed();
    logs.push(s.log().to_jsonl());
    let ancestors = s.graph().ancestors(&id(TARGET)).unwrap();
    ensure(ancestors.len() + 1 == 11, || format!("{} ancestors", ancestors.len()))?;
    let bad = all_in_spec(&s);
    ensure(bad.is_empty(), || format!("not in spec: {bad:?}"))?;
    let order: Vec<&str> = s
        .log()
        .events()
        .iter()
        .filter(|e| e.event == EventKind::Calibrate)
        .map(|e| e.node.as_str())
        .collect();
    let pos: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    ensure(pos.len() == 11, || format!("{} nodes calibrated", pos.len()))?;
    for (node, dep) in s.graph().edges() {
        ensure(pos[dep.as_str()] < pos[node.as_str()], || format!("{dep} calibrated after {node}"))?;
    }
    ensure(wall < BRINGUP_LIMIT, || format!("took {wall:?}"))?;
    Ok(format!(
        "11 nodes in spec, calibrate order respects all {} edges, {} experiments, {:.3?} wall",
        s.graph().edges().len(),
        report.experiments_run,
        wall
    ))
}

/// Cramér-Rao bound on the amplified pi-length fit: model
/// `a + b * h(d; L)` with the device's own population curve, binomial
/// variance per point, nuisance offset and contrast.
fn fisher_sigma_pi(truth_pi: f64, t2_ns: f64, p10: f64, p11: f64, durations: &[f64], repeats: f64, shots: f64) -> f64 {
    let h = |d: f64, l: f64| {
        let coherent = (PI * repeats * d / (2.0 * l)).sin().powi(2);
        0.5 + (coherent - 0.5) * (-repeats * d / t2_ns).exp()
    };
    let (a, b) = (p10, p11 - p10);
    let mut fisher = DMatrix::<f64>::zeros(3, 3);
    for &d in durations {
        let m = a + b * h(d, truth_pi);
        let var = m * (1.0 - m) / shots;
        let step = truth_pi * 1e-7;
        let dl = b * (h(d, truth_pi + step) - h(d, truth_pi - step)) / (2.0 * step);
        let g = DVector::from_vec(vec![dl, 1.0, h(d, truth_pi)]);
        fisher += &g * g.transpose() / var;
    }
    let cov = fisher.try_inverse().expect("singular Fisher matrix");
    cov[(0, 0)].sqrt()
}

fn criterion_2(s: &Session) -> Verdict {
    let mut lines = Vec::new();
    for q in ["q0", "q1"] {
        let truth = s.device().qubit(q).unwrap();
        let node = id(&format!("rabi_fine.{q}"));
        let stored = s.store().param(&node, rabi::PI_LENGTH).unwrap().value;
        let error = PI * (stored / truth.pi_length_ns() - 1.0).abs();

        let spec = s.graph().spec(&node).unwrap();
        let repeats = spec.behavior_options["repeats"];
        let centre = s.store().param(&id(&format!("rabi_mid.{q}")), rabi::PI_LENGTH).unwrap().value;
        let durations: Vec<f64> = spec.calibrate_scan.points.iter().map(|p| centre * (1.0 + p / repeats)).collect();
        let threshold = s.store().param(&id(&format!("readout_threshold.{q}")), readout::THRESHOLD).unwrap().value;
        let sigma = fisher_sigma_pi(
            truth.pi_length_ns(),
            truth.t2_like_decay_ns,
            truth.readout_one_probability(false, threshold),
            truth.readout_one_probability(true, threshold),
            &durations,
            repeats,
            f64::from(spec.calibrate_scan.shots_per_point),
        );
        let bound = 3.0 * PI * sigma / truth.pi_length_ns();
        ensure(repeats == 11.0 && spec.calibrate_scan.shots_per_point == 10_000, || {
            format!("{q}: shot budget changed")
        })?;
        ensure(bound <= ROTATION_BUDGET_RAD, || format!("{q}: 3 sigma budget {bound:.2e} above {ROTATION_BUDGET_RAD:.0e}"))?;
        ensure(error <= bound, || format!("{q}: error {error:.2e} rad above 3 sigma {bound:.2e}"))?;
        lines.push(format!("{q} error {error:.2e} rad (3 sigma {bound:.2e})"));
    }
    Ok(lines.join(", "))
}

fn criterion_3(s: &mut Session, logs: &mut Vec<String>) -> Verdict {
    let before = s.device().experiments_run();
    let report = s.maintain(&id(TARGET)).map_err(|e| e.to_string())?;
    logs.push(s.log().to_jsonl());
    let taken = s.device().experiments_run() - before;
    ensure(taken == 0 && report.experiments_run == 0, || format!("{taken} experiments"))?;
    Ok("re-run took 0 experiments".into())
}

fn criterion_4(logs: &mut Vec<String>) -> Verdict {
    let mut s = brought_up();
    advance_past_timeout(&mut s, "rabi_fine.q0");
    let expired = failing_check_state(&s);
    let timed_out: Vec<String> = s
        .graph()
        .ids()
        .filter(|n| {
            let r = s.store().record(n).unwrap();
            s.now() - r.last_pass_time.unwrap() >= s.graph().spec(n).unwrap().timeout
        })
        .map(|n| n.to_string())
        .collect();
    ensure(timed_out == ["rabi_fine.q0"], || format!("timed out: {timed_out:?}"))?;
    ensure(!s.graph().dependents(&id("rabi_fine.q0")).unwrap().is_empty(), || "not mid-graph".into())?;
    let report = s.maintain(&id(TARGET)).map_err(|e| e.to_string())?;
    logs.push(s.log().to_jsonl());
    let (cd, cal) = (report.count(Action::CheckData), report.count(Action::Calibrate));
    ensure(cd == 1 && cal == 0, || format!("{cd} check_data, {cal} calibrates"))?;
    let still = failing_check_state(&s);
    ensure(still.is_empty(), || format!("failing check_state: {still:?}"))?;
    Ok(format!("1 node timed out, {} failing check_state, then 1 check_data, 0 calibrates, all pass", expired.len()))
}

fn criterion_5(logs: &mut Vec<String>) -> Verdict {
    let mut s = brought_up();
    let drive = s.store().param(&id("spectroscopy.q0"), spectroscopy::F_DRIVE).unwrap().value;
    s.device_mut().shift_param("q0.f_q_ghz", 0.003).map_err(|e| e.to_string())?;
    let shift_mhz = (s.device().qubit("q0").unwrap().f_q_ghz - drive).abs() * 1e3;
    let tol = s.graph().spec(&id("spectroscopy.q0")).unwrap().tolerance["max_shift_mhz"];
    ensure(shift_mhz > tol, || format!("jump {shift_mhz:.2} MHz inside tolerance"))?;
    advance_past_timeout(&mut s, "spectroscopy.q0");
    let report = s.maintain(&id(TARGET)).map_err(|e| e.to_string())?;
    logs.push(s.log().to_jsonl());

    let root = id("spectroscopy.q0");
    let mut expected: BTreeSet<NodeId> = s.graph().descendants(&root).unwrap().into_iter().cloned().collect();
    expected.insert(root.clone());
    let calibrated: BTreeSet<NodeId> = report.nodes_with(Action::Calibrate).into_iter().cloned().collect();
    ensure(calibrated == expected, || format!("calibrated {calibrated:?}, expected {expected:?}"))?;
    let checked: Vec<&NodeId> = report.nodes_with(Action::CheckData);
    ensure(checked == [&root], || format!("check_data on {checked:?}"))?;
    let q1_touched: Vec<String> = report
        .visited
        .iter()
        .filter(|(n, a)| n.qubits() == ["q1"] && *a != Action::CheckStatePass)
        .map(|(n, a)| format!("{n} {a}"))
        .collect();
    ensure(q1_touched.is_empty(), || format!("q1 nodes touched: {q1_touched:?}"))?;
    let bad = all_in_spec(&s);
    ensure(bad.is_empty(), || format!("not in spec: {bad:?}"))?;
    Ok(format!("recalibrated {} nodes: {}; no q1 data", calibrated.len(), join(&calibrated)))
}

fn join<'a>(ids: impl IntoIterator<Item = &'a NodeId>) -> String {
    ids.into_iter().map(|n| n.as_str()).collect::<Vec<_>>().join(" ")
}

fn criterion_6(logs: &mut Vec<String>) -> Verdict {
    let mut s = brought_up();
    s.inject_fault(&Fault::CorruptParam {
        node: id("spectroscopy.q0"),
        param: spectroscopy::F_DRIVE.into(),
        factor: 1.02,
    })
    .map_err(|e| e.to_string())?;
    advance_past_timeout(&mut s, "rabi_fine.q0");
    let ancestors_ok = s
        .graph()
        .ancestors(&id("rabi_fine.q0"))
        .unwrap()
        .into_iter()
        .all(|n| s.check_state(n).unwrap().passed());
    ensure(ancestors_ok, || "ancestors not fresh before maintain".into())?;
    let start = s.log().len();
    s.maintain(&id("rabi_fine.q0")).map_err(|e| e.to_string())?;
    logs.push(s.log().to_jsonl());
    let seg = s.log().since(start);
    let first_bad = seg
        .iter()
        .position(|e| e.event == EventKind::CheckData && e.node == "rabi_fine.q0" && e.outcome == "bad_data")
        .ok_or("no bad_data check on rabi_fine.q0")?;
    let next = &seg[first_bad + 1];
    ensure(next.event == EventKind::DiagnoseEnter && next.node == "rabi_fine.q0", || {
        format!("bad data followed by {} {}", next.event, next.node)
    })?;
    let mut depth = 0;
    let mut repaired = Vec::new();
    for e in &seg[first_bad + 1..] {
        match e.event {
            EventKind::DiagnoseEnter => depth += 1,
            EventKind::DiagnoseExit => depth -= 1,
            EventKind::Calibrate if depth > 0 => repaired.push(e.node.clone()),
            _ => {}
        }
    }
    ensure(repaired.iter().any(|n| n == "spectroscopy.q0"), || format!("diagnose calibrated {repaired:?}"))?;
    let inside = check_states_inside_diagnose(&s);
    ensure(inside == 0, || format!("{inside} check_state events inside diagnose"))?;
    let bad = all_in_spec(&s);
    ensure(bad.is_empty(), || format!("not in spec: {bad:?}"))?;
    let drive = s.store().param(&id("spectroscopy.q0"), spectroscopy::F_DRIVE).unwrap().value;
    let off_mhz = (drive - s.device().qubit("q0").unwrap().f_q_ghz).abs() * 1e3;
    Ok(format!(
        "check_data bad_data -> diagnose, diagnose recalibrated [{}], f_drive now {off_mhz:.3} MHz off, 0 check_state inside",
        repaired.join(" ")
    ))
}

fn criterion_7(logs: &mut Vec<String>) -> Verdict {
    let mut s = brought_up();
    s.inject_fault(&Fault::FlatlineReadout).map_err(|e| e.to_string())?;
    advance_past_timeout(&mut s, "rabi_fine.q0");
    let err = match s.maintain(&id("rabi_fine.q0")) {
        Ok(_) => return Err("maintain succeeded".into()),
        Err(e) => e.error,
    };
    logs.push(s.log().to_jsonl());
    let EngineError::DiagnoseError { node, checked } = &err else {
        return Err(format!("got {err}"));
    };
    let mut chain: Vec<&NodeId> = s.graph().ancestors(&id("rabi_fine.q0")).unwrap();
    let target = id("rabi_fine.q0");
    chain.push(&target);
    ensure(chain.contains(&node), || format!("{node} outside the target chain"))?;
    let deps: Vec<NodeId> = s.graph().dependencies(node).unwrap().to_vec();
    ensure(*checked == deps, || format!("checked {checked:?}, dependencies {deps:?}"))?;
    let logged = s
        .log()
        .events()
        .iter()
        .any(|e| e.event == EventKind::Error && e.outcome == "diagnose_error");
    ensure(logged, || "no error event".into())?;
    Ok(format!("{err}"))
}

fn criterion_8(logs: &mut Vec<String>) -> Verdict {
    let mut out = Vec::new();
    for dep in ["rabi_fine.q1", "spectroscopy.q1"] {
        let mut s = brought_up();
        s.calibrate(&id(dep)).map_err(|e| e.to_string())?;
        let before = s.device().experiments_run();
        let clock = s.now();
        let result = s.check_state(&id(TARGET)).map_err(|e| e.to_string())?;
        ensure(s.device().experiments_run() == before && s.now() == clock, || "query took data".into())?;
        let CheckState::Fail(reason) = result else {
            return Err(format!("{TARGET} passed after recalibrating {dep}"));
        };
        ensure(matches!(reason.condition(), 3 | 4), || format!("condition {}", reason.condition()))?;
        logs.push(s.log().to_jsonl());
        out.push(format!("{dep} -> condition {} ({})", reason.condition(), reason.name()));
    }
    Ok(format!("{}; 0 experiments", out.join(", ")))
}

fn run_1_to_8(results: &mut Vec<(u32, Verdict)>) -> Vec<String> {
    let mut logs = Vec::new();
    results.push((1, criterion_1(&mut logs)));
    let mut s = brought_up();
    results.push((2, criterion_2(&s)));
    results.push((3, criterion_3(&mut s, &mut logs)));
    results.push((4, criterion_4(&mut logs)));
    results.push((5, criterion_5(&mut logs)));
    results.push((6, criterion_6(&mut logs)));
    results.push((7, criterion_7(&mut logs)));
    results.push((8, criterion_8(&mut logs)));
    logs
}

// Criterion 10 runs fixed-seed versions of the property suites that live in
// the other test targets.

fn random_dag(rng: &mut ChaCha8Rng, n: usize) -> Vec<NodeSpec> {
    let names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    (0..n)
        .map(|i| {
            let deps: Vec<&str> = (0..i).filter(|_| rng.random_bool(0.15)).map(|j| names[j].as_str()).collect();
            NodeSpec::bare(&names[i], &deps)
        })
        .collect()
}

fn dag_properties() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=50);
        let specs = random_dag(&mut rng, n);
        let graph = CalGraph::build(specs.clone()).map_err(|e| format!("valid DAG rejected: {e}"))?;
        let order: BTreeMap<&str, usize> = graph
            .topological_order()
            .into_iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        for (node, dep) in graph.edges() {
            ensure(order[dep.as_str()] < order[node.as_str()], || format!("{dep} after {node}"))?;
        }
        let with_edges: Vec<usize> = (0..n).filter(|&i| !specs[i].dependencies.is_empty()).collect();
        if let Some(&i) = with_edges.first() {
            // Close a cycle: make the first dependency depend on i.
            let mut cyclic = specs.clone();
            let j: usize = cyclic[i].dependencies[0].as_str()[1..].parse().unwrap();
            cyclic[j].dependencies.push(NodeId::new(format!("n{i}")));
            ensure(CalGraph::build(cyclic).is_err(), || "cycle accepted".into())?;
        }
        cases += 1;
    }
    Ok(cases)
}

fn ideal_context(node: &str, options: &BTreeMap<String, f64>) -> NodeContext {
    let mut v = ParamView::new();
    for (q, f, pi) in [("q0", 5.0, 20.0), ("q1", 5.8, 25.0)] {
        v.set(q, readout::THRESHOLD, 2.0);
        v.set(q, readout::CENTER_0, 0.0);
        v.set(q, readout::CENTER_1, 4.0);
        v.set(q, readout::SIGMA, 1.0);
        v.set(q, spectroscopy::F_DRIVE, f);
        v.set(q, spectroscopy::LINEWIDTH, 2.0);
        v.set(q, spectroscopy::PEAK_HEIGHT, 0.5);
        v.set(q, rabi::PI_LENGTH, pi);
    }
    v.set("q0-q1", two_qubit::CZ_TIME, 40.0);
    let mut ctx = NodeContext::new(NodeId::new(node), v);
    ctx.options = options.clone();
    ctx
}

fn self_generated(spec: &NodeSpec, ctx: &NodeContext, purpose: ScanPurpose) -> ScanData {
    let b = registry(&spec.behavior).unwrap();
    let template = match purpose {
        ScanPurpose::CheckData => &spec.check_data_scan,
        ScanPurpose::Calibrate => &spec.calibrate_scan,
    };
    let (abscissa, experiments) = b.experiments(ctx, template, purpose).unwrap();
    let measured = b.expected_curve(ctx, &experiments).unwrap();
    ScanData {
        node: ctx.node.clone(),
        purpose,
        abscissa,
        experiments,
        measured,
        shots: template.shots_per_point,
    }
}

fn round_trip() -> Result<f64, String> {
    let graph = parse_graph(EXAMPLE_GRAPH).unwrap();
    let mut worst = 0.0f64;
    for spec in graph.specs() {
        let ctx = ideal_context(spec.id.as_str(), &spec.behavior_options);
        let b = registry(&spec.behavior).unwrap();
        let data = self_generated(spec, &ctx, ScanPurpose::Calibrate);
        let CalibrationAnalysis::Proposed { params, .. } =
            b.analyze_calibrate(&ctx, &data, &spec.tolerance).map_err(|e| e.to_string())?
        else {
            return Err(format!("{}: noiseless data judged bad", spec.id));
        };
        for (name, value) in params {
            if let Some(truth) = ctx.params.get(ctx.scope(), &name) {
                // Absolute error for parameters whose truth is zero.
                let rel = if truth == 0.0 { value.abs() } else { (value / truth - 1.0).abs() };
                ensure(rel <= 1e-6, || format!("{} {name}: relative error {rel:.2e}", spec.id))?;
                worst = worst.max(rel);
            }
        }
    }
    Ok(worst)
}

fn rank(c: Classification) -> u8 {
    match c {
        Classification::InSpec => 0,
        Classification::OutOfSpec => 1,
        Classification::BadData => 2,
    }
}

fn monotone_sweep() -> Result<String, String> {
    let graph = parse_graph(EXAMPLE_GRAPH).unwrap();
    let mut out = Vec::new();
    for (node, param) in [
        ("rabi_coarse.q0", rabi::PI_LENGTH),
        ("rabi_fine.q0", rabi::PI_LENGTH),
        ("spectroscopy.q0", spectroscopy::F_DRIVE),
    ] {
        let spec = graph.spec(&id(node)).unwrap();
        let b = registry(&spec.behavior).unwrap();
        let ctx = ideal_context(node, &spec.behavior_options);
        let stored = ctx.param("q0", param).unwrap();
        let data = self_generated(spec, &ctx, ScanPurpose::CheckData);
        let mut last = 0;
        let mut seen = BTreeSet::new();
        for k in 0..=400 {
            let offset = match param {
                spectroscopy::F_DRIVE => k as f64 * 0.05e-3,
                _ => stored * k as f64 * 0.0025,
            };
            let truth = ctx.with_param("q0", param, stored + offset);
            let mut shifted = data.clone();
            shifted.measured = b.expected_curve(&truth, &data.experiments).unwrap();
            let c = rank(b.analyze_check(&ctx, &shifted, &spec.tolerance).unwrap().classification);
            ensure(c >= last, || format!("{node}: backward transition at step {k}"))?;
            last = c;
            seen.insert(c);
        }
        ensure(seen.contains(&0) && seen.contains(&1), || format!("{node}: classes seen {seen:?}"))?;
        out.push(format!("{node} {}", seen.len()));
    }
    Ok(out.join(", "))
}

fn persistence(s: &Session) -> Result<(), String> {
    let bytes = s.store().to_bytes();
    let restored = StateStore::restore(bytes.as_slice()).map_err(|e| e.to_string())?;
    ensure(restored == *s.store(), || "restored store differs".into())?;
    ensure(restored.to_bytes() == bytes, || "second persist differs".into())
}

fn criterion_10() -> Verdict {
    let dags = dag_properties()?;
    let worst = round_trip()?;
    let sweep = monotone_sweep()?;
    let s = brought_up();
    persistence(&s)?;
    let _ = DeviceConfig::default();
    Ok(format!(
        "{dags} random DAGs, round-trip worst {worst:.1e}, monotone sweep classes [{sweep}], persistence equal"
    ))
}

fn main() {
    let start = Instant::now();
    let mut results = Vec::new();
    let first = run_1_to_8(&mut results);
    let second = run_1_to_8(&mut Vec::new());
    let identical = first == second;
    let bytes: usize = first.iter().map(String::len).sum();
    results.push((
        9,
        if identical {
            Ok(format!("{} logs, {bytes} bytes, identical across runs", first.len()))
        } else {
            Err("event logs differ between runs".into())
        },
    ));
    results.push((10, criterion_10()));
    let total = start.elapsed();
    let mut failed = 0;
    for (n, verdict) in &results {
        match verdict {
            Ok(msg) => println!("PASS criterion {n}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {n}: {msg}");
            }
        }
    }
    if total < TOTAL_LIMIT {
        println!("PASS runtime: {total:.2?} total");
    } else {
        failed += 1;
        println!("FAIL runtime: {total:.2?} total, limit {TOTAL_LIMIT:?}");
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
