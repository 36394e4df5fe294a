//! Failure classification, diagnosis and the three-level escalation protocol.
//!
//! Recovery proceeds `local_retry -> local_patch -> request_replan` and never
//! skips a level. The per-node [`RecoveryState`] counter is what enforces
//! this: the functions here refuse any action the counter does not permit and
//! return the trace records an accepted action produces. The engine appends
//! those records, so every recovery decision is visible in the log.

use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lifecycle::{NodeState, RecoveryState, Trigger};
use crate::persistence::RecordBody;
use crate::plan::{NodeConfig, NodeId, Payload, Plan};
use crate::scheduler::ExecutionState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Transient,
    ContractViolation,
    AuthError,
    Structural,
}

impl ErrorKind {
    /// Lifecycle trigger a failure of this kind fires on a running node.
    pub fn trigger(self) -> Trigger {
        match self {
            ErrorKind::Structural => Trigger::StructuralError,
            _ => Trigger::TransientError,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub kind: ErrorKind,
    pub detail: String,
}

impl Failure {
    pub fn new(kind: ErrorKind, detail: impl Into<String>) -> Self {
        Self { kind, detail: detail.into() }
    }

    /// Classifies `detail` with [`classify_error`].
    pub fn classified(detail: impl Into<String>) -> Self {
        let detail = detail.into();
        Self { kind: classify_error(&detail), detail }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}

const RULES: &[(&[&str], ErrorKind)] = &[
    (
        &["transient", "timeout", "timed out", "network", "rate limit", "rate-limit", "connection", "unavailable"],
        ErrorKind::Transient,
    ),
    (&["contract", "field exists", "validation rule"], ErrorKind::ContractViolation),
    (&["auth", "unauthorized", "forbidden", "permission", "credential"], ErrorKind::AuthError),
];

/// Maps a raw failure message to an [`ErrorKind`] by keyword. First matching
/// rule wins; anything unrecognised is structural.
pub fn classify_error(raw: &str) -> ErrorKind {
    let lower = raw.to_ascii_lowercase();
    RULES
        .iter()
        .find(|(words, _)| words.iter().any(|w| lower.contains(w)))
        .map(|(_, kind)| *kind)
        .unwrap_or(ErrorKind::Structural)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryAction {
    LocalRetry,
    LocalPatch,
    RequestReplan,
}

impl RecoveryAction {
    /// Highest level a node may escalate to from `state`.
    pub fn ceiling(state: RecoveryState) -> Self {
        match state {
            RecoveryState::Pristine => RecoveryAction::LocalRetry,
            RecoveryState::Retried => RecoveryAction::LocalPatch,
            RecoveryState::Patched => RecoveryAction::RequestReplan,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub node: NodeId,
    pub failure: Failure,
    pub cause: String,
    pub action: RecoveryAction,
    /// Recommendation before the escalation ceiling was applied.
    pub raw_action: RecoveryAction,
    pub confidence: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Exec,
    Diag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reader {
    Executor,
    Diagnoser,
}

impl Reader {
    fn allowed(self) -> Region {
        match self {
            Reader::Executor => Region::Exec,
            Reader::Diagnoser => Region::Diag,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{reader:?} attempted to read the {region:?} context")]
pub struct ContextViolation {
    pub reader: Reader,
    pub region: Region,
}

/// What a node action may see.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecContext {
    /// Outputs of executed predecessors.
    pub inputs: Vec<(NodeId, Payload)>,
    pub retries_remaining: u32,
    pub timeout_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub node: NodeId,
    pub attempt: u32,
    pub plan_version: u32,
    pub failure: Failure,
}

/// What the diagnoser and planner may see.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagContext {
    pub failures: Vec<FailureEvent>,
    pub prior_versions: Vec<Plan>,
    pub annotations: Vec<String>,
}

/// The two disjoint contexts. Access goes through a [`ContextView`] bound to
/// one reader role.
#[derive(Clone, Debug, Default)]
pub struct ContextPartition {
    exec: ExecContext,
    diag: Arc<DiagContext>,
}

impl ContextPartition {
    pub fn new(exec: ExecContext, diag: Arc<DiagContext>) -> Self {
        Self { exec, diag }
    }

    pub fn view(&self, reader: Reader) -> ContextView {
        ContextView { reader, partition: self.clone(), reads: Arc::default() }
    }
}

/// A role-bound view that records every read attempt.
#[derive(Clone, Debug)]
pub struct ContextView {
    reader: Reader,
    partition: ContextPartition,
    reads: Arc<Mutex<Vec<(Region, bool)>>>,
}

impl ContextView {
    pub fn reader(&self) -> Reader {
        self.reader
    }

    fn record(&self, region: Region) -> Result<(), ContextViolation> {
        let ok = self.reader.allowed() == region;
        self.reads.lock().expect("read log poisoned").push((region, ok));
        if ok {
            Ok(())
        } else {
            Err(ContextViolation { reader: self.reader, region })
        }
    }

    pub fn exec(&self) -> Result<&ExecContext, ContextViolation> {
        self.record(Region::Exec).map(|_| &self.partition.exec)
    }

    pub fn diag(&self) -> Result<&DiagContext, ContextViolation> {
        self.record(Region::Diag).map(|_| &*self.partition.diag)
    }

    /// Every read attempted through this view: region and whether it was allowed.
    pub fn reads(&self) -> Vec<(Region, bool)> {
        self.reads.lock().expect("read log poisoned").clone()
    }

    pub fn violations(&self) -> usize {
        self.reads().iter().filter(|(_, ok)| !ok).count()
    }
}

pub trait Diagnoser: Send + Sync {
    fn diagnose(
        &self,
        failure: &Failure,
        node: &NodeId,
        recovery_state: RecoveryState,
        view: &ContextView,
    ) -> Result<Diagnosis, RecoveryError>;
}

/// Fixed rule table: transient errors retry, contract and auth errors patch,
/// structural errors replan, each capped at the node's escalation ceiling.
#[derive(Clone, Copy, Debug, Default)]
pub struct RuleDiagnoser;

impl Diagnoser for RuleDiagnoser {
    fn diagnose(
        &self,
        failure: &Failure,
        node: &NodeId,
        recovery_state: RecoveryState,
        view: &ContextView,
    ) -> Result<Diagnosis, RecoveryError> {
        let history = view.diag()?;
        let (raw_action, confidence) = match failure.kind {
            ErrorKind::Transient => (RecoveryAction::LocalRetry, 1.0),
            ErrorKind::ContractViolation | ErrorKind::AuthError => (RecoveryAction::LocalPatch, 0.8),
            ErrorKind::Structural => (RecoveryAction::RequestReplan, 0.6),
        };
        let seen = history.failures.iter().filter(|f| &f.node == node).count();
        Ok(Diagnosis {
            node: node.clone(),
            failure: failure.clone(),
            cause: format!("{:?} failure ({} recorded for this node): {}", failure.kind, seen, failure.detail),
            action: raw_action.min(RecoveryAction::ceiling(recovery_state)),
            raw_action,
            confidence,
        })
    }
}

/// Supplies replacement configurations for local patches.
pub trait PatchSource: Send + Sync {
    fn patch(&self, node: &NodeId, current: &NodeConfig, failure: &Failure) -> Option<NodeConfig>;
}

/// Marks the action as patched by appending [`crate::executor::PATCHED_ACTION_SUFFIX`].
#[derive(Clone, Copy, Debug, Default)]
pub struct SuffixPatcher;

impl PatchSource for SuffixPatcher {
    fn patch(&self, _node: &NodeId, current: &NodeConfig, _failure: &Failure) -> Option<NodeConfig> {
        let suffix = crate::executor::PATCHED_ACTION_SUFFIX;
        if current.action.ends_with(suffix) {
            return None;
        }
        let mut next = current.clone();
        next.action.push_str(suffix);
        Some(next)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoveryError {
    #[error("escalation order violation{}: {reason}", node.as_ref().map(|n| format!(" on {n}")).unwrap_or_default())]
    EscalationOrderViolation { node: Option<NodeId>, reason: String },
    #[error("retry budget of {0} exhausted")]
    BudgetExhausted(NodeId),
    #[error("patch for {0} changes join topology")]
    TopologyChangeAttempted(NodeId),
    #[error("{node} is {state}, not failed_retryable")]
    NotRecoverable { node: NodeId, state: NodeState },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Context(#[from] ContextViolation),
}

fn violation(node: &NodeId, reason: &str) -> RecoveryError {
    RecoveryError::EscalationOrderViolation { node: Some(node.clone()), reason: reason.into() }
}

fn recoverable<'a>(
    state: &'a ExecutionState,
    node: &NodeId,
) -> Result<&'a crate::lifecycle::NodeRuntime, RecoveryError> {
    let rt = state.runtime(node).ok_or_else(|| RecoveryError::UnknownNode(node.clone()))?;
    if rt.state != NodeState::FailedRetryable {
        return Err(RecoveryError::NotRecoverable { node: node.clone(), state: rt.state });
    }
    Ok(rt)
}

/// Records for a level-1 retry of `node`.
pub fn retry_records(
    state: &ExecutionState,
    node: &NodeId,
    diagnosis: Option<Diagnosis>,
) -> Result<Vec<RecordBody>, RecoveryError> {
    let rt = recoverable(state, node)?;
    if rt.recovery_state == RecoveryState::Patched {
        return Err(violation(node, "retry after patch"));
    }
    if rt.retries_remaining() == 0 {
        return Err(RecoveryError::BudgetExhausted(node.clone()));
    }
    Ok(vec![
        RecordBody::RecoveryAction { node: node.clone(), action: RecoveryAction::LocalRetry, diagnosis, config: None },
        RecordBody::Transition {
            node: node.clone(),
            from: NodeState::FailedRetryable,
            to: NodeState::Pending,
            trigger: Trigger::Retry,
        },
    ])
}

/// Records for a level-2 patch of `node` to `config`.
pub fn patch_records(
    state: &ExecutionState,
    node: &NodeId,
    config: NodeConfig,
    diagnosis: Option<Diagnosis>,
) -> Result<Vec<RecordBody>, RecoveryError> {
    let rt = recoverable(state, node)?;
    match rt.recovery_state {
        RecoveryState::Pristine => return Err(violation(node, "patch before retry")),
        RecoveryState::Patched => return Err(violation(node, "node already patched in this plan version")),
        RecoveryState::Retried => {}
    }
    let current = state.config(node);
    if config.join != current.join || config.any_of_group != current.any_of_group {
        return Err(RecoveryError::TopologyChangeAttempted(node.clone()));
    }
    Ok(vec![
        RecordBody::RecoveryAction {
            node: node.clone(),
            action: RecoveryAction::LocalPatch,
            diagnosis,
            config: Some(config),
        },
        RecordBody::Transition {
            node: node.clone(),
            from: NodeState::FailedRetryable,
            to: NodeState::Pending,
            trigger: Trigger::Retry,
        },
    ])
}

/// Nodes that failed while executing, excluding nodes failed only because a
/// join could no longer hold.
pub fn execution_failed(state: &ExecutionState) -> Vec<NodeId> {
    state
        .runtimes()
        .values()
        .filter(|rt| rt.state == NodeState::Failed && rt.attempts > 0)
        .map(|rt| rt.node.clone())
        .collect()
}

/// Checks the level-3 precondition and returns the failed node set.
pub fn replan_precondition(state: &ExecutionState) -> Result<Vec<NodeId>, RecoveryError> {
    let failed = execution_failed(state);
    if failed.is_empty() {
        return Err(RecoveryError::EscalationOrderViolation {
            node: None,
            reason: "replan requested with no failed node".into(),
        });
    }
    for n in &failed {
        if state.runtimes()[n].recovery_state != RecoveryState::Patched {
            return Err(violation(n, "replan before every failed node was patched"));
        }
    }
    Ok(failed)
}
