//! Write-ahead log, snapshots and replay.
//!
//! Every state change of a run is first appended here as a [`TraceRecord`] and
//! only then applied to the [`ExecutionState`]. Replay folds the same records
//! through the same [`ExecutionState::apply`], so a replayed state equals the
//! live one field for field.
//!
//! On disk a run is `<run-id>.wal`, one JSON object per line with sorted keys
//! and a `crc` field (CRC-32 of the line without that field), plus snapshots
//! named `<run-id>.<seq>.snap`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::clock::Timestamp;
use crate::executor::Outcome;
use crate::lifecycle::{is_terminal, NodeState, Trigger};
use crate::plan::{NodeConfig, NodeId, Plan, ReplanEvent, RuleCheck, ValidationMethod};
use crate::recovery::{Diagnosis, RecoveryAction};
use crate::scheduler::{ApplyError, ExecutionState};

/// Default number of node-terminal transitions between snapshots.
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordBody {
    Transition {
        node: NodeId,
        from: NodeState,
        to: NodeState,
        trigger: Trigger,
    },
    Dispatch {
        node: NodeId,
        attempt: u32,
    },
    Outcome {
        node: NodeId,
        attempt: u32,
        duration_ms: u64,
        outcome: OutcomeRecord,
    },
    ContractReport {
        node: NodeId,
        attempt: u32,
        method: ValidationMethod,
        checks: Vec<RuleCheck>,
        passed: bool,
    },
    RecoveryAction {
        node: NodeId,
        action: RecoveryAction,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        diagnosis: Option<Diagnosis>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<NodeConfig>,
    },
    /// A replan request, logged under the version being abandoned.
    Replan {
        reason: String,
        failed: Vec<NodeId>,
    },
    LateOutcome {
        node: NodeId,
        attempt: u32,
        outcome: OutcomeRecord,
    },
    RoundBoundary {
        round: u64,
        ready: Vec<NodeId>,
    },
    /// A plan version taking effect: the initial plan, or a replan result
    /// together with the nodes whose terminal state carries over.
    PlanCommitted {
        plan: Plan,
        carried: Vec<NodeId>,
        human_timeout_ms: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        event: Option<ReplanEvent>,
    },
}

impl RecordBody {
    pub fn kind(&self) -> &'static str {
        match self {
            RecordBody::Transition { .. } => "transition",
            RecordBody::Dispatch { .. } => "dispatch",
            RecordBody::Outcome { .. } => "outcome",
            RecordBody::ContractReport { .. } => "contract_report",
            RecordBody::RecoveryAction { .. } => "recovery_action",
            RecordBody::Replan { .. } => "replan",
            RecordBody::LateOutcome { .. } => "late_outcome",
            RecordBody::RoundBoundary { .. } => "round_boundary",
            RecordBody::PlanCommitted { .. } => "plan_committed",
        }
    }
}

/// Outcome as logged: the executor's outcome, or a deadline expiry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeRecord {
    Executed(Outcome),
    TimedOut,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub clock: Timestamp,
    pub plan_id: String,
    pub plan_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
    #[serde(flatten)]
    pub body: RecordBody,
}

impl TraceRecord {
    /// True for a transition into a terminal state.
    pub fn is_terminal_transition(&self) -> bool {
        matches!(&self.body, RecordBody::Transition { to, .. } if is_terminal(*to))
    }

    /// One NDJSON line (without the trailing newline).
    pub fn encode(&self) -> String {
        let mut value = serde_json::to_value(self).expect("records serialize");
        let crc = crc32fast::hash(value.to_string().as_bytes());
        value.as_object_mut().expect("record is an object").insert("crc".into(), Value::from(crc));
        value.to_string()
    }

    /// Parses one line, verifying its checksum. `expected_seq` is used to
    /// name the record in errors when the line itself is unreadable.
    pub fn decode(line: &str, expected_seq: u64) -> Result<Self, PersistError> {
        let corrupt = || PersistError::CorruptRecord(expected_seq);
        let mut value: Value = serde_json::from_str(line).map_err(|_| corrupt())?;
        let obj = value.as_object_mut().ok_or_else(corrupt)?;
        let crc = obj.remove("crc").and_then(|c| c.as_u64()).ok_or_else(corrupt)?;
        if u64::from(crc32fast::hash(value.to_string().as_bytes())) != crc {
            return Err(corrupt());
        }
        serde_json::from_value(value).map_err(|_| corrupt())
    }
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o failure after seq {last_durable_seq}: {source}")]
    Io {
        last_durable_seq: u64,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record at seq {0}")]
    CorruptRecord(u64),
    #[error("sequence gap: expected {expected}, found {found}")]
    SeqGap { expected: u64, found: u64 },
    #[error("log is empty")]
    EmptyLog,
    #[error("record {seq} does not apply: {source}")]
    Apply {
        seq: u64,
        #[source]
        source: ApplyError,
    },
}

/// Receives every record before it is applied, and the state right after.
pub trait RecordSink: Send {
    fn append(&mut self, record: &TraceRecord) -> Result<(), PersistError>;

    fn applied(&mut self, _record: &TraceRecord, _state: &ExecutionState) -> Result<(), PersistError> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub plan_version: u32,
    pub state: ExecutionState,
}

/// File-backed log for one run.
#[derive(Debug)]
pub struct Wal {
    dir: PathBuf,
    run_id: String,
    file: File,
    last_seq: u64,
    fsync: bool,
    snapshot_every: u64,
    terminal_since_snapshot: u64,
    snapshots_written: Vec<u64>,
}

impl Wal {
    /// Creates (truncating) `<dir>/<run_id>.wal`.
    pub fn create(dir: impl AsRef<Path>, run_id: &str) -> Result<Self, PersistError> {
        let dir = dir.as_ref().to_path_buf();
        let io = |source| PersistError::Io { last_durable_seq: 0, source };
        fs::create_dir_all(&dir).map_err(io)?;
        let file =
            OpenOptions::new().create(true).write(true).truncate(true).open(wal_path(&dir, run_id)).map_err(io)?;
        Ok(Self {
            dir,
            run_id: run_id.to_string(),
            file,
            last_seq: 0,
            fsync: true,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            terminal_since_snapshot: 0,
            snapshots_written: Vec::new(),
        })
    }

    pub fn snapshot_every(mut self, n: u64) -> Self {
        assert!(n > 0, "snapshot interval must be positive");
        self.snapshot_every = n;
        self
    }

    /// Disables `fsync` after each append. Records are still written before
    /// they are applied.
    pub fn without_fsync(mut self) -> Self {
        self.fsync = false;
        self
    }

    pub fn path(&self) -> PathBuf {
        wal_path(&self.dir, &self.run_id)
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    /// Seq watermarks of the snapshots written so far.
    pub fn snapshots(&self) -> &[u64] {
        &self.snapshots_written
    }

    fn io(&self, source: std::io::Error) -> PersistError {
        PersistError::Io { last_durable_seq: self.last_seq, source }
    }
}

impl RecordSink for Wal {
    fn append(&mut self, record: &TraceRecord) -> Result<(), PersistError> {
        if record.seq != self.last_seq + 1 {
            return Err(PersistError::SeqGap { expected: self.last_seq + 1, found: record.seq });
        }
        let mut line = record.encode();
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| self.io(e))?;
        if self.fsync {
            self.file.sync_data().map_err(|e| self.io(e))?;
        }
        self.last_seq = record.seq;
        Ok(())
    }

    fn applied(&mut self, record: &TraceRecord, state: &ExecutionState) -> Result<(), PersistError> {
        if !record.is_terminal_transition() {
            return Ok(());
        }
        self.terminal_since_snapshot += 1;
        if self.terminal_since_snapshot < self.snapshot_every {
            return Ok(());
        }
        self.terminal_since_snapshot = 0;
        let snap = Snapshot { seq: record.seq, plan_version: record.plan_version, state: state.clone() };
        let text = serde_json::to_vec(&snap).expect("state serializes");
        fs::write(snapshot_path(&self.dir, &self.run_id, record.seq), text).map_err(|e| self.io(e))?;
        self.snapshots_written.push(record.seq);
        Ok(())
    }
}

/// In-memory sink, mostly for tests.
#[derive(Clone, Debug, Default)]
pub struct MemorySink {
    pub records: Vec<TraceRecord>,
}

impl RecordSink for MemorySink {
    fn append(&mut self, record: &TraceRecord) -> Result<(), PersistError> {
        self.records.push(record.clone());
        Ok(())
    }
}

pub fn wal_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join(format!("{run_id}.wal"))
}

pub fn snapshot_path(dir: &Path, run_id: &str, seq: u64) -> PathBuf {
    dir.join(format!("{run_id}.{seq}.snap"))
}

/// Reads and verifies a WAL file.
pub fn read_wal(path: &Path) -> Result<Vec<TraceRecord>, PersistError> {
    let file = File::open(path).map_err(|source| PersistError::Io { last_durable_seq: 0, source })?;
    let mut records: Vec<TraceRecord> = Vec::new();
    for line in BufReader::new(file).lines() {
        let last = records.last().map_or(0, |r| r.seq);
        let line = line.map_err(|source| PersistError::Io { last_durable_seq: last, source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = TraceRecord::decode(&line, last + 1)?;
        if record.seq != last + 1 {
            return Err(PersistError::SeqGap { expected: last + 1, found: record.seq });
        }
        records.push(record);
    }
    Ok(records)
}

/// Snapshot watermarks present on disk for a run, ascending.
pub fn list_snapshots(dir: &Path, run_id: &str) -> Result<Vec<u64>, PersistError> {
    let prefix = format!("{run_id}.");
    let mut seqs = Vec::new();
    let entries = fs::read_dir(dir).map_err(|source| PersistError::Io { last_durable_seq: 0, source })?;
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(seq) =
            name.strip_prefix(&prefix).and_then(|rest| rest.strip_suffix(".snap")).and_then(|s| s.parse().ok())
        {
            seqs.push(seq);
        }
    }
    seqs.sort_unstable();
    Ok(seqs)
}

pub fn read_snapshot(dir: &Path, run_id: &str, seq: u64) -> Result<Snapshot, PersistError> {
    let bytes =
        fs::read(snapshot_path(dir, run_id, seq)).map_err(|source| PersistError::Io { last_durable_seq: 0, source })?;
    serde_json::from_slice(&bytes).map_err(|_| PersistError::CorruptRecord(seq))
}

/// Folds `records` (those with seq after `initial`'s watermark, up to
/// `upto`) into `initial`.
pub fn replay_from(
    mut initial: ExecutionState,
    records: &[TraceRecord],
    upto: Option<u64>,
) -> Result<ExecutionState, PersistError> {
    for rec in records {
        if upto.is_some_and(|u| rec.seq > u) {
            break;
        }
        if rec.seq <= initial.last_seq() {
            continue;
        }
        if rec.seq != initial.last_seq() + 1 {
            return Err(PersistError::SeqGap { expected: initial.last_seq() + 1, found: rec.seq });
        }
        initial.apply(rec).map_err(|source| PersistError::Apply { seq: rec.seq, source })?;
    }
    Ok(initial)
}

/// Replays an in-memory log from scratch. The first record must commit the
/// initial plan.
pub fn replay_records(records: &[TraceRecord], upto: Option<u64>) -> Result<ExecutionState, PersistError> {
    let first = records.first().ok_or(PersistError::EmptyLog)?;
    let initial =
        ExecutionState::from_commit(first).map_err(|source| PersistError::Apply { seq: first.seq, source })?;
    replay_from(initial, records, upto)
}

/// Replays a run from disk, starting at the latest snapshot at or below
/// `upto` when one exists.
pub fn replay(dir: &Path, run_id: &str, upto: Option<u64>) -> Result<ExecutionState, PersistError> {
    let records = read_wal(&wal_path(dir, run_id))?;
    let limit = upto.unwrap_or(u64::MAX);
    let snap =
        list_snapshots(dir, run_id)?.into_iter().rfind(|s| *s <= limit && *s <= records.last().map_or(0, |r| r.seq));
    match snap {
        Some(seq) => replay_from(read_snapshot(dir, run_id, seq)?.state, &records, upto),
        None => replay_records(&records, upto),
    }
}
