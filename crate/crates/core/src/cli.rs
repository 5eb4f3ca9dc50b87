//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or parse error, 2 invalid graph,
//! 3 diagnose error, 4 calibration failure, 5 scenario assertion failed.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{self, ConfigError};
use crate::device::Device;
use crate::engine::{EngineError, MaintainReport, Session};
use crate::graph::NodeId;
use crate::scenario::{Scenario, ScenarioOutcome};
use crate::state::{NodeStatus, StateStore};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID_GRAPH: i32 = 2;
pub const EXIT_DIAGNOSE: i32 = 3;
pub const EXIT_CALIBRATE: i32 = 4;
pub const EXIT_ASSERT: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "calgraph", version, about = "Calibration graph runner with a simulated device")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a graph config and print its edges and topological order.
    Validate { graph: PathBuf },
    /// Bring a target node in spec.
    Maintain {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        device: PathBuf,
        /// Snapshot to resume from.
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print one row per node of a state snapshot.
    Status {
        #[arg(long)]
        state: PathBuf,
    },
    /// Run a scenario script.
    Scenario {
        script: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        device: PathBuf,
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit code for an engine error.
pub fn exit_code(err: &EngineError) -> i32 {
    match err {
        EngineError::DiagnoseError { .. } => EXIT_DIAGNOSE,
        EngineError::CalibrateFailed { .. } | EngineError::BadDataInCalibrate { .. } => EXIT_CALIBRATE,
        _ => EXIT_IO,
    }
}

fn config_exit(err: &ConfigError) -> i32 {
    match err {
        ConfigError::Graph(_) => EXIT_INVALID_GRAPH,
        _ => EXIT_IO,
    }
}

/// Runs the CLI, writing normal output to `out` and diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_IO } else { EXIT_OK };
            if e.use_stderr() {
                let _ = write!(err, "{e}");
            } else {
                let _ = write!(out, "{e}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Validate { graph } => validate(&graph, out),
        Command::Maintain {
            graph,
            device,
            state,
            target,
            out: dir,
        } => maintain(&graph, &device, state.as_deref(), &target, &dir, out),
        Command::Status { state } => status(&state, out),
        Command::Scenario {
            script,
            graph,
            device,
            state,
            out: dir,
        } => scenario(&script, &graph, &device, state.as_deref(), &dir, out),
    };
    match result {
        Ok(code) => code,
        Err((code, message)) => {
            let _ = writeln!(err, "error: {message}");
            code
        }
    }
}

type CmdResult = Result<i32, (i32, String)>;

fn io_err(path: &Path, e: std::io::Error) -> (i32, String) {
    (EXIT_IO, format!("{}: {e}", path.display()))
}

fn validate(path: &Path, out: &mut dyn Write) -> CmdResult {
    let graph = config::load_graph(path).map_err(|e| (config_exit(&e), e.to_string()))?;
    let edges = graph.edges();
    let mut text = format!("valid graph: {} nodes, {} edges\nedges:\n", graph.len(), edges.len());
    for (node, dep) in edges {
        text.push_str(&format!("  {node} -> {dep}\n"));
    }
    text.push_str("topological order:\n");
    for (i, id) in graph.topological_order().into_iter().enumerate() {
        text.push_str(&format!("  {:>2} {id}\n", i + 1));
    }
    write!(out, "{text}").map_err(|e| (EXIT_IO, e.to_string()))?;
    Ok(EXIT_OK)
}

fn load_store(path: &Path) -> Result<StateStore, (i32, String)> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    StateStore::restore(BufReader::new(file)).map_err(|e| (EXIT_IO, format!("{}: {e}", path.display())))
}

fn open_session(graph: &Path, device: &Path, state: Option<&Path>) -> Result<Session, (i32, String)> {
    let graph = config::load_graph(graph).map_err(|e| (config_exit(&e), e.to_string()))?;
    let device_cfg = config::load_device(device).map_err(|e| (EXIT_IO, e.to_string()))?;
    let mut device = Device::from_config(&device_cfg).map_err(|e| (EXIT_IO, e.to_string()))?;
    let store = match state {
        Some(p) => {
            let store = load_store(p)?;
            device.resume_at(store.latest_time());
            store
        }
        None => StateStore::for_graph(&graph),
    };
    Ok(Session::new(graph, store, device))
}

/// Writes `events.jsonl`, `state.jsonl` and `scans/*.dat` under `dir`.
pub fn write_artifacts(session: &Session, dir: &Path) -> std::io::Result<()> {
    let scans = dir.join("scans");
    fs::create_dir_all(&scans)?;
    fs::write(dir.join("events.jsonl"), session.log().to_jsonl())?;
    fs::write(dir.join("state.jsonl"), session.store().to_bytes())?;
    for (i, scan) in session.scans().iter().enumerate() {
        let purpose = match scan.purpose {
            crate::behaviors::ScanPurpose::CheckData => "check",
            crate::behaviors::ScanPurpose::Calibrate => "calibrate",
        };
        let name = format!("{:04}_{}_{purpose}.dat", i + 1, scan.node);
        fs::write(scans.join(name), scan.to_columns())?;
    }
    Ok(())
}

fn summary(report: &MaintainReport) -> String {
    let mut s = format!(
        "maintain {}: {}\nexperiments run: {}\nvirtual time: {:.3} s\nvisited:\n",
        report.target,
        if report.success { "ok" } else { "failed" },
        report.experiments_run,
        report.elapsed
    );
    for (node, action) in &report.visited {
        s.push_str(&format!("  {node} {action}\n"));
    }
    s
}

fn maintain(graph: &Path, device: &Path, state: Option<&Path>, target: &str, dir: &Path, out: &mut dyn Write) -> CmdResult {
    let mut session = open_session(graph, device, state)?;
    let result = session.maintain(&NodeId::new(target));
    write_artifacts(&session, dir).map_err(|e| io_err(dir, e))?;
    let (report, code, failure) = match result {
        Ok(r) => (r, EXIT_OK, None),
        Err(e) => (e.report, exit_code(&e.error), Some(e.error.to_string())),
    };
    let mut text = summary(&report);
    text.push_str(&status_table(session.store(), session.now()));
    write!(out, "{text}").map_err(|e| (EXIT_IO, e.to_string()))?;
    match failure {
        Some(message) => Err((code, message)),
        None => Ok(code),
    }
}

fn status_name(s: NodeStatus) -> &'static str {
    match s {
        NodeStatus::InSpec => "in_spec",
        NodeStatus::OutOfSpec => "out_of_spec",
        NodeStatus::Unknown => "unknown",
        NodeStatus::FailedUnresolved => "failed_unresolved",
    }
}

/// One row per node: id, status, age since last pass, version, figures of
/// merit.
pub fn status_table(store: &StateStore, now: f64) -> String {
    let width = store.records().map(|(id, _)| id.as_str().len()).max().unwrap_or(4).max(4);
    let mut s = format!("{:<width$}  {:<17}  {:>10}  {:>3}  figures of merit\n", "node", "status", "age_s", "ver");
    for (id, rec) in store.records() {
        let age = rec
            .last_pass_time
            .map_or("-".to_string(), |t| format!("{:.1}", now - t));
        let foms = rec
            .last_figures_of_merit
            .iter()
            .map(|(k, v)| format!("{k}={v:.4e}"))
            .collect::<Vec<_>>()
            .join(" ");
        s.push_str(&format!(
            "{:<width$}  {:<17}  {:>10}  {:>3}  {}\n",
            id.as_str(),
            status_name(rec.status),
            age,
            rec.cal_version,
            foms
        ));
    }
    s
}

fn status(state: &Path, out: &mut dyn Write) -> CmdResult {
    let store = load_store(state)?;
    write!(out, "{}", status_table(&store, store.latest_time())).map_err(|e| (EXIT_IO, e.to_string()))?;
    Ok(EXIT_OK)
}

fn scenario(script: &Path, graph: &Path, device: &Path, state: Option<&Path>, dir: &Path, out: &mut dyn Write) -> CmdResult {
    let text = fs::read_to_string(script).map_err(|e| io_err(script, e))?;
    let parsed = Scenario::parse(&text).map_err(|e| (EXIT_IO, format!("{}: {e}", script.display())))?;
    let mut session = open_session(graph, device, state)?;
    let report = parsed.run(&mut session);
    write_artifacts(&session, dir).map_err(|e| io_err(dir, e))?;
    let mut text = String::new();
    for r in &report.maintains {
        text.push_str(&summary(r));
    }
    text.push_str(&status_table(session.store(), session.now()));
    write!(out, "{text}").map_err(|e| (EXIT_IO, e.to_string()))?;
    match report.outcome {
        ScenarioOutcome::Completed => Ok(EXIT_OK),
        ScenarioOutcome::AssertFailed { step, line, message } => {
            Err((EXIT_ASSERT, format!("assertion failed at step {step} (line {line}): {message}")))
        }
        ScenarioOutcome::Failed { step, line, error } => {
            Err((exit_code(&error), format!("step {step} (line {line}): {error}")))
        }
    }
}
