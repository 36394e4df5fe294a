//! The `sgh` command line: validate, run, replay and bench.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0    | success |
//! | 1    | plan failed validation |
//! | 2    | unreadable or unparsable input |
//! | 3    | the run finished but the plan did not succeed |
//! | 4    | engine or harness error |
//! | 5    | the log could not be replayed |
//! | 64   | usage error |

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::clock::{VirtualClock, WallClock};
use crate::executor::{FaultScript, ScriptedExecutor};
use crate::harness::{run_bench, BenchConfig, Group, Metric, Tier};
use crate::persistence::{self, PersistError, Wal};
use crate::plan::{parse_plan, validate_plan, NodeConfig, NodeId, PredicateRegistry};
use crate::scheduler::{
    ApprovalDecision, ApprovalHook, ApproveAll, Engine, EngineConfig, EngineError, ExecutionState, RecoveryCounts,
    RunStatus,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_PLAN_FAILED: i32 = 3;
pub const EXIT_ENGINE: i32 = 4;
pub const EXIT_REPLAY: i32 = 5;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "sgh", version, about = "Static-DAG workflow harness")]
pub struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a plan file.
    Validate { plan: PathBuf },
    /// Execute a plan and write its log.
    Run(RunArgs),
    /// Rebuild execution state from a log file.
    Replay {
        wal: PathBuf,
        /// Stop after this sequence number.
        #[arg(long)]
        upto: Option<u64>,
    },
    /// Compare experiment groups on generated tasks.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub plan: PathBuf,
    /// Fault script (JSON map of node id to ops).
    #[arg(long)]
    pub faults: Option<PathBuf>,
    /// Directory for the log and snapshots.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Log file stem; defaults to the plan id.
    #[arg(long)]
    pub run_id: Option<String>,
    /// Accepted for symmetry with bench; scripted runs are deterministic.
    #[arg(long, env = "SGH_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Simulate time instead of sleeping.
    #[arg(long)]
    pub virtual_clock: bool,
    /// Snapshot after this many terminal transitions.
    #[arg(long, default_value_t = persistence::DEFAULT_SNAPSHOT_EVERY)]
    pub snapshot_n: u64,
    #[arg(long, default_value_t = crate::scheduler::DEFAULT_HUMAN_TIMEOUT_MS)]
    pub human_timeout_ms: u64,
    /// Approve every high_write node without prompting.
    #[arg(long)]
    pub approve_all: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Groups to run, e.g. G1,G2,G3,G4,G5,G6.
    #[arg(long, required = true, value_delimiter = ',')]
    pub groups: Vec<Group>,
    #[arg(long = "tier", value_delimiter = ',', default_value = "medium")]
    pub tiers: Vec<Tier>,
    /// Tasks per tier.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 10)]
    pub reps: u32,
    #[arg(long, env = "SGH_SEED", default_value_t = 0)]
    pub seed: u64,
    /// success_rate, contract_satisfaction or efficiency.
    #[arg(long, default_value = "success_rate")]
    pub metric: Metric,
    /// Add zero-fault fork-join tasks.
    #[arg(long)]
    pub parallel: bool,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the ready-set histogram CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Final execution state in printable form; `run` and `replay` share it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StateSummary {
    pub plan_id: String,
    pub plan_version: u32,
    pub rounds: u64,
    pub clock_ms: u64,
    pub last_seq: u64,
    pub ready_sets: Vec<Vec<NodeId>>,
    pub nodes: BTreeMap<NodeId, String>,
    pub recovery: RecoveryCounts,
}

impl StateSummary {
    pub fn of(state: &ExecutionState) -> Self {
        Self {
            plan_id: state.plan().id().to_string(),
            plan_version: state.plan().version(),
            rounds: state.round(),
            clock_ms: state.clock(),
            last_seq: state.last_seq(),
            ready_sets: state.ready_history().iter().map(|r| r.members.clone()).collect(),
            nodes: state.runtimes().iter().map(|(n, rt)| (n.clone(), rt.state.to_string())).collect(),
            recovery: state.recovery_counts(),
        }
    }

    fn print(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(
            out,
            "plan {} v{}, {} rounds, clock {} ms, last seq {}",
            self.plan_id, self.plan_version, self.rounds, self.clock_ms, self.last_seq
        )?;
        for (i, set) in self.ready_sets.iter().enumerate() {
            let names: Vec<&str> = set.iter().map(NodeId::as_str).collect();
            writeln!(out, "  round {}: |U|={} [{}]", i + 1, set.len(), names.join(", "))?;
        }
        for (n, s) in &self.nodes {
            writeln!(out, "  {n}: {s}")?;
        }
        let r = &self.recovery;
        writeln!(out, "  recovery: {} retry, {} patch, {} replan", r.retry, r.patch, r.replan)
    }
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let json = cli.json;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let code = match cli.command {
        Command::Validate { plan } => cmd_validate(&plan, json, &mut out),
        Command::Run(args) => cmd_run(&args, json, &mut out),
        Command::Replay { wal, upto } => cmd_replay(&wal, upto, json, &mut out),
        Command::Bench(args) => cmd_bench(&args, json, &mut out),
    };
    let _ = out.flush();
    code
}

fn fail(json: bool, out: &mut impl Write, code: i32, kind: &str, message: &str) -> i32 {
    if json {
        let _ = writeln!(out, "{}", serde_json::json!({ "error": kind, "message": message }));
    } else {
        eprintln!("error: {message}");
    }
    code
}

fn emit_json(out: &mut impl Write, value: &impl Serialize) {
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

pub fn cmd_validate(path: &Path, json: bool, out: &mut impl Write) -> i32 {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => return fail(json, out, EXIT_INPUT, "io", &format!("{}: {e}", path.display())),
    };
    let plan = match parse_plan(&bytes) {
        Ok(p) => p,
        Err(e) => return fail(json, out, EXIT_INPUT, "parse", &e.to_string()),
    };
    let report = validate_plan(&plan, &PredicateRegistry::new());
    if json {
        emit_json(out, &report);
    } else if report.ok {
        let _ = writeln!(out, "{}: ok ({} nodes)", plan.id(), plan.len());
    } else {
        for f in &report.failures {
            let _ = writeln!(out, "{:?}: {}", f.check, f.message);
        }
    }
    if report.ok {
        EXIT_OK
    } else {
        EXIT_INVALID
    }
}

/// Approval prompt on the terminal. Lines come from one reader thread so an
/// unanswered prompt does not leave a second reader behind.
struct TerminalApproval {
    lines: Receiver<Option<String>>,
    closed: bool,
}

impl TerminalApproval {
    fn new() -> Self {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let stdin = io::stdin();
            for line in stdin.lock().lines() {
                match line {
                    Ok(l) => {
                        if tx.send(Some(l)).is_err() {
                            return;
                        }
                    }
                    Err(_) => break,
                }
            }
            let _ = tx.send(None);
        });
        Self { lines: rx, closed: false }
    }
}

impl ApprovalHook for TerminalApproval {
    fn decide(&mut self, node: &NodeId, config: &NodeConfig, timeout_ms: u64) -> ApprovalDecision {
        if self.closed {
            return ApprovalDecision::NoResponse;
        }
        eprint!("approve {node} ({}, {:?})? [y/n] within {timeout_ms} ms: ", config.action, config.side_effect);
        let _ = io::stderr().flush();
        match self.lines.recv_timeout(Duration::from_millis(timeout_ms)) {
            Ok(Some(answer)) => match answer.trim().to_ascii_lowercase().as_str() {
                "y" | "yes" => ApprovalDecision::Approve,
                "n" | "no" => ApprovalDecision::Cancel,
                _ => ApprovalDecision::NoResponse,
            },
            Ok(None) | Err(RecvTimeoutError::Disconnected) => {
                self.closed = true;
                eprintln!("(no input)");
                ApprovalDecision::NoResponse
            }
            Err(RecvTimeoutError::Timeout) => {
                eprintln!("(timed out)");
                ApprovalDecision::NoResponse
            }
        }
    }
}

#[derive(Serialize)]
struct RunOutput<'a> {
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<&'a str>,
    ready_sizes: Vec<usize>,
    wal: PathBuf,
    snapshots: Vec<u64>,
    state: StateSummary,
}

pub fn cmd_run(args: &RunArgs, json: bool, out: &mut impl Write) -> i32 {
    let plan = match std::fs::read(&args.plan)
        .map_err(|e| e.to_string())
        .and_then(|b| parse_plan(&b).map_err(|e| e.to_string()))
    {
        Ok(p) => p,
        Err(e) => return fail(json, out, EXIT_INPUT, "parse", &e),
    };
    let faults = match &args.faults {
        None => FaultScript::new(),
        Some(path) => match std::fs::read(path)
            .map_err(|e| e.to_string())
            .and_then(|b| FaultScript::from_json(&b).map_err(|e| e.to_string()))
        {
            Ok(f) => f,
            Err(e) => return fail(json, out, EXIT_INPUT, "parse", &format!("fault script: {e}")),
        },
    };
    let run_id = args.run_id.clone().unwrap_or_else(|| plan.id().to_string());
    let wal = match Wal::create(&args.out, &run_id) {
        Ok(w) if args.snapshot_n > 0 => w.snapshot_every(args.snapshot_n),
        Ok(_) => return fail(json, out, EXIT_USAGE, "usage", "--snapshot-n must be positive"),
        Err(e) => return fail(json, out, EXIT_INPUT, "io", &e.to_string()),
    };
    let wal_path = wal.path();
    let config = EngineConfig { human_timeout_ms: args.human_timeout_ms, ..EngineConfig::default() };
    let mut builder = Engine::builder(plan, ScriptedExecutor::new(faults)).config(config).sink(wal);
    builder = if args.virtual_clock { builder.clock(VirtualClock::new(0)) } else { builder.clock(WallClock::new()) };
    builder = if args.approve_all { builder.approval(ApproveAll) } else { builder.approval(TerminalApproval::new()) };
    let mut engine = match builder.build() {
        Ok(e) => e,
        Err(EngineError::InvalidPlan(report)) => {
            if json {
                emit_json(out, &report);
            } else {
                let _ = writeln!(out, "plan failed validation: {report}");
            }
            return EXIT_INVALID;
        }
        Err(e) => return fail(json, out, EXIT_ENGINE, "engine", &e.to_string()),
    };
    let status = match engine.run() {
        Ok(s) => s,
        Err(e) => return fail(json, out, EXIT_ENGINE, "engine", &e.to_string()),
    };
    let snapshots = persistence::list_snapshots(&args.out, &run_id).unwrap_or_default();
    let result = engine.into_result(status.clone());
    let summary = StateSummary::of(&result.state);
    let reason = match &status {
        RunStatus::Succeeded => None,
        RunStatus::Failed { reason } => Some(reason.as_str()),
    };
    if json {
        emit_json(
            out,
            &RunOutput {
                status: if status.succeeded() { "succeeded" } else { "failed" },
                reason,
                ready_sizes: result.ready_sizes(),
                wal: wal_path.clone(),
                snapshots,
                state: summary,
            },
        );
    } else {
        let _ = summary.print(out);
        let _ = writeln!(out, "ready-set sizes: {:?}", result.ready_sizes());
        match reason {
            None => {
                let _ = writeln!(out, "status: succeeded");
            }
            Some(r) => {
                let _ = writeln!(out, "status: failed ({r})");
            }
        }
        let _ = writeln!(out, "log: {}", wal_path.display());
    }
    if status.succeeded() {
        EXIT_OK
    } else {
        EXIT_PLAN_FAILED
    }
}

fn split_wal_path(path: &Path) -> Option<(PathBuf, String)> {
    let run_id = path.file_name()?.to_str()?.strip_suffix(".wal")?.to_string();
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Some((dir, run_id))
}

pub fn cmd_replay(path: &Path, upto: Option<u64>, json: bool, out: &mut impl Write) -> i32 {
    let Some((dir, run_id)) = split_wal_path(path) else {
        return fail(json, out, EXIT_USAGE, "usage", "log path must end in .wal");
    };
    let state = match persistence::replay(&dir, &run_id, upto) {
        Ok(s) => s,
        Err(PersistError::Io { source, .. }) => return fail(json, out, EXIT_INPUT, "io", &source.to_string()),
        Err(e @ PersistError::CorruptRecord(seq)) => {
            if json {
                emit_json(out, &serde_json::json!({ "error": "corrupt_record", "seq": seq }));
            } else {
                eprintln!("error: {e}");
            }
            return EXIT_REPLAY;
        }
        Err(e) => return fail(json, out, EXIT_REPLAY, "replay", &e.to_string()),
    };
    let summary = StateSummary::of(&state);
    if json {
        emit_json(out, &summary);
    } else {
        let _ = summary.print(out);
    }
    EXIT_OK
}

pub fn cmd_bench(args: &BenchArgs, json: bool, out: &mut impl Write) -> i32 {
    let config = BenchConfig {
        groups: args.groups.clone(),
        tiers: args.tiers.clone(),
        count: args.count,
        reps: args.reps,
        seed: args.seed,
        metric: args.metric,
        parallel_family: args.parallel,
    };
    let report = match run_bench(&config) {
        Ok(r) => r,
        Err(e) => return fail(json, out, EXIT_ENGINE, "harness", &e.to_string()),
    };
    let text = report.to_json();
    if let Some(path) = &args.out {
        if let Err(e) = std::fs::write(path, &text) {
            return fail(json, out, EXIT_INPUT, "io", &format!("{}: {e}", path.display()));
        }
    }
    if let Some(path) = &args.csv {
        if let Err(e) = std::fs::write(path, report.ready_histogram_csv()) {
            return fail(json, out, EXIT_INPUT, "io", &format!("{}: {e}", path.display()));
        }
    }
    if json {
        let _ = writeln!(out, "{text}");
        return EXIT_OK;
    }
    let _ = writeln!(out, "metric {:?}, config {}", report.metric, &report.config_hash[..12]);
    for (g, s) in &report.groups {
        let tag = if s.synthetic { " (synthetic)" } else { "" };
        let _ = writeln!(
            out,
            "{g}{tag} {:<40} perf {:.4}  success {:.3}  rounds {:.2} ± {:.2}",
            s.description,
            s.perf.to_f64(),
            s.success_rate,
            s.mean_rounds,
            s.sd_rounds
        );
    }
    if let Some(g) = &report.gains {
        let _ = writeln!(
            out,
            "gains: plan {:.4}, scaffold {:.4}, graph {:.4}, patch {:.4}, replan {:.4}, total {:.4}",
            g.g_plan.to_f64(),
            g.g_scaffold.to_f64(),
            g.g_graph.to_f64(),
            g.g_patch.to_f64(),
            g.g_replan.to_f64(),
            g.g_total.to_f64()
        );
    }
    EXIT_OK
}
