//! Ready-set computation, dispatch and the execution engine.
//!
//! [`ExecutionState`] is changed only by [`ExecutionState::apply`], one
//! [`TraceRecord`] at a time. The engine decides what happens and logs it;
//! applying the log is the single code path shared by live runs and replay.

mod engine;
mod ready;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::executor::{NodeOutput, Outcome};
use crate::lifecycle::{self, is_terminal, LifecycleError, NodeRuntime, NodeState, RecoveryState, Trigger};
use crate::persistence::{OutcomeRecord, RecordBody, TraceRecord};
use crate::plan::{NodeConfig, NodeId, Payload, Plan, ReplanEvent};
use crate::recovery::{DiagContext, ErrorKind, Failure, FailureEvent, RecoveryAction};

pub use engine::{
    attempt_bound, literal_transition_bound, run_to_completion, transition_bound, ApprovalDecision, ApprovalHook,
    ApproveAll, Engine, EngineBuilder, EngineConfig, EngineError, FallbackReplanner, NeverRespond, RecoveryLevels,
    Replanner, RoundReport, RunResult, RunStatus, DEFAULT_HUMAN_TIMEOUT_MS,
};
pub use ready::{
    compute_ready_set, dispatch, incremental_members, join_holds, join_unsatisfiable, ready_members,
    update_ready_set_incremental, NodeStates, ReadyTracker,
};

/// Nodes eligible for dispatch at the start of a round, ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadySet {
    pub round: u64,
    pub members: Vec<NodeId>,
}

impl ReadySet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryCounts {
    pub retry: u64,
    pub patch: u64,
    pub replan: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApplyError {
    #[error("expected seq {expected}, got {found}")]
    Sequence { expected: u64, found: u64 },
    #[error("record is for {plan_id} v{version}, state holds {state_id} v{state_version}")]
    VersionMismatch { plan_id: String, version: u32, state_id: String, state_version: u32 },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{node}: record says {recorded}, state has {actual}")]
    StateMismatch { node: NodeId, recorded: NodeState, actual: NodeState },
    #[error("{node}: record says attempt {recorded}, state expects {expected}")]
    AttemptMismatch { node: NodeId, recorded: u32, expected: u32 },
    #[error("{0}: {1}")]
    Lifecycle(NodeId, LifecycleError),
    #[error("malformed {0} record")]
    Malformed(&'static str),
}

/// Global execution state for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionState {
    plan: Plan,
    runtimes: BTreeMap<NodeId, NodeRuntime>,
    round: u64,
    clock: Timestamp,
    last_seq: u64,
    human_timeout_ms: u64,
    /// Configurations replaced by local patches.
    overrides: BTreeMap<NodeId, NodeConfig>,
    outputs: BTreeMap<NodeId, NodeOutput>,
    /// Success payloads awaiting their contract report.
    staged: BTreeMap<NodeId, Payload>,
    diag: DiagContext,
    ready_history: Vec<ReadySet>,
    /// Transitions applied under the current plan version.
    transitions: u64,
    total_transitions: u64,
    dispatches: u64,
    recovery: RecoveryCounts,
    late_outcomes: u64,
    /// Times the unreachable ready -> blocked arc fired.
    blocked_entries: u64,
    replans: Vec<ReplanEvent>,
}

impl ExecutionState {
    fn fresh(plan: Plan, human_timeout_ms: u64) -> Self {
        let runtimes = plan
            .nodes()
            .iter()
            .map(|(id, cfg)| (id.clone(), NodeRuntime::new(id.clone(), cfg, human_timeout_ms)))
            .collect();
        Self {
            plan,
            runtimes,
            round: 0,
            clock: 0,
            last_seq: 0,
            human_timeout_ms,
            overrides: BTreeMap::new(),
            outputs: BTreeMap::new(),
            staged: BTreeMap::new(),
            diag: DiagContext::default(),
            ready_history: Vec::new(),
            transitions: 0,
            total_transitions: 0,
            dispatches: 0,
            recovery: RecoveryCounts::default(),
            late_outcomes: 0,
            blocked_entries: 0,
            replans: Vec::new(),
        }
    }

    /// State before any record: every node pending. Its `last_seq` is 0, so
    /// the first record of a log must still be applied to it.
    pub fn initial(plan: Plan, human_timeout_ms: u64) -> Self {
        Self::fresh(plan, human_timeout_ms)
    }

    /// State right after the opening `plan_committed` record of a log.
    pub fn from_commit(record: &TraceRecord) -> Result<Self, ApplyError> {
        match &record.body {
            RecordBody::PlanCommitted { plan, carried, human_timeout_ms, event: None } if carried.is_empty() => {
                let mut state = Self::fresh(plan.clone(), *human_timeout_ms);
                state.apply(record)?;
                Ok(state)
            }
            _ => Err(ApplyError::Malformed("opening plan_committed")),
        }
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn runtimes(&self) -> &BTreeMap<NodeId, NodeRuntime> {
        &self.runtimes
    }

    pub fn runtime(&self, node: &NodeId) -> Option<&NodeRuntime> {
        self.runtimes.get(node)
    }

    /// Panics for a node outside the current plan.
    pub fn node_state(&self, node: &NodeId) -> NodeState {
        self.runtimes[node].state
    }

    /// Effective configuration: the patched one if a patch was applied.
    pub fn config(&self, node: &NodeId) -> &NodeConfig {
        self.overrides.get(node).unwrap_or_else(|| self.plan.config(node))
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn clock(&self) -> Timestamp {
        self.clock
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn human_timeout_ms(&self) -> u64 {
        self.human_timeout_ms
    }

    pub fn outputs(&self) -> &BTreeMap<NodeId, NodeOutput> {
        &self.outputs
    }

    pub fn diag(&self) -> &DiagContext {
        &self.diag
    }

    pub fn ready_history(&self) -> &[ReadySet] {
        &self.ready_history
    }

    pub fn transitions(&self) -> u64 {
        self.transitions
    }

    pub fn total_transitions(&self) -> u64 {
        self.total_transitions
    }

    pub fn dispatches(&self) -> u64 {
        self.dispatches
    }

    pub fn recovery_counts(&self) -> RecoveryCounts {
        self.recovery
    }

    pub fn late_outcomes(&self) -> u64 {
        self.late_outcomes
    }

    pub fn blocked_entries(&self) -> u64 {
        self.blocked_entries
    }

    pub fn replans(&self) -> &[ReplanEvent] {
        &self.replans
    }

    pub fn all_terminal(&self) -> bool {
        self.runtimes.values().all(|rt| is_terminal(rt.state))
    }

    pub fn count_in(&self, state: NodeState) -> usize {
        self.runtimes.values().filter(|rt| rt.state == state).count()
    }

    fn rt_mut(&mut self, node: &NodeId) -> Result<&mut NodeRuntime, ApplyError> {
        self.runtimes.get_mut(node).ok_or_else(|| ApplyError::UnknownNode(node.clone()))
    }

    fn record_failure(&mut self, node: &NodeId, attempt: u32, failure: Failure) -> Result<(), ApplyError> {
        let version = self.plan.version();
        self.rt_mut(node)?.last_error = Some(failure.clone());
        self.diag.failures.push(FailureEvent { node: node.clone(), attempt, plan_version: version, failure });
        Ok(())
    }

    /// Applies one record. This is the only way state changes.
    pub fn apply(&mut self, record: &TraceRecord) -> Result<(), ApplyError> {
        if record.seq != self.last_seq + 1 {
            return Err(ApplyError::Sequence { expected: self.last_seq + 1, found: record.seq });
        }
        let expected_version = match &record.body {
            RecordBody::PlanCommitted { event: Some(_), .. } => self.plan.version() + 1,
            _ => self.plan.version(),
        };
        if record.plan_id != self.plan.id() || record.plan_version != expected_version {
            return Err(ApplyError::VersionMismatch {
                plan_id: record.plan_id.clone(),
                version: record.plan_version,
                state_id: self.plan.id().to_string(),
                state_version: self.plan.version(),
            });
        }
        self.clock = record.clock;
        self.apply_body(&record.body)?;
        self.last_seq = record.seq;
        Ok(())
    }

    fn apply_body(&mut self, body: &RecordBody) -> Result<(), ApplyError> {
        match body {
            RecordBody::Transition { node, from, to, trigger } => {
                let clock = self.clock;
                let rt = self.rt_mut(node)?;
                if rt.state != *from {
                    return Err(ApplyError::StateMismatch { node: node.clone(), recorded: *from, actual: rt.state });
                }
                let next =
                    lifecycle::transition(rt, *trigger, clock).map_err(|e| ApplyError::Lifecycle(node.clone(), e))?;
                if next.state != *to {
                    return Err(ApplyError::StateMismatch { node: node.clone(), recorded: *to, actual: next.state });
                }
                *rt = next;
                if *from == NodeState::Ready && *trigger == Trigger::DepLost {
                    self.blocked_entries += 1;
                }
                self.transitions += 1;
                self.total_transitions += 1;
            }
            RecordBody::Dispatch { node, attempt } => {
                let rt = self.rt_mut(node)?;
                if rt.state != NodeState::Running {
                    return Err(ApplyError::StateMismatch {
                        node: node.clone(),
                        recorded: NodeState::Running,
                        actual: rt.state,
                    });
                }
                if *attempt != rt.attempts + 1 {
                    return Err(ApplyError::AttemptMismatch {
                        node: node.clone(),
                        recorded: *attempt,
                        expected: rt.attempts + 1,
                    });
                }
                rt.attempts = *attempt;
                self.dispatches += 1;
            }
            RecordBody::Outcome { node, attempt, outcome, .. } => match outcome {
                OutcomeRecord::Executed(Outcome::Success { payload }) => {
                    self.rt_mut(node)?;
                    self.staged.insert(node.clone(), payload.clone());
                }
                OutcomeRecord::Executed(Outcome::Failure { failure } | Outcome::Retry { failure }) => {
                    self.record_failure(node, *attempt, failure.clone())?;
                }
                OutcomeRecord::Executed(Outcome::Escalate { .. }) => {
                    self.rt_mut(node)?;
                }
                OutcomeRecord::TimedOut => {
                    let timeout = self.rt_mut(node)?.timeout_ms;
                    let failure = Failure::new(ErrorKind::Transient, format!("exceeded timeout of {timeout} ms"));
                    self.record_failure(node, *attempt, failure)?;
                }
            },
            RecordBody::ContractReport { node, attempt, method, checks, passed } => {
                let clock = self.clock;
                self.rt_mut(node)?.contract_passed = *passed;
                let payload = self.staged.remove(node).ok_or(ApplyError::Malformed("contract_report"))?;
                if *passed {
                    self.outputs.insert(
                        node.clone(),
                        NodeOutput {
                            payload,
                            produced_at: clock,
                            validation: checks.clone(),
                            validation_method: *method,
                        },
                    );
                } else {
                    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.rule.to_string()).collect();
                    let failure = Failure::new(
                        ErrorKind::ContractViolation,
                        format!("contract rule(s) failed: {}", failed.join("; ")),
                    );
                    self.record_failure(node, *attempt, failure)?;
                }
            }
            RecordBody::RecoveryAction { node, action, config, .. } => {
                let rt = self.rt_mut(node)?;
                match action {
                    RecoveryAction::LocalRetry => {
                        rt.recovery_state = rt.recovery_state.max(RecoveryState::Retried);
                        self.recovery.retry += 1;
                    }
                    RecoveryAction::LocalPatch => {
                        let config = config.clone().ok_or(ApplyError::Malformed("recovery_action"))?;
                        rt.patch_attempt = true;
                        rt.timeout_ms = config.timeout_ms;
                        rt.recovery_state = RecoveryState::Patched;
                        self.overrides.insert(node.clone(), config);
                        self.recovery.patch += 1;
                    }
                    RecoveryAction::RequestReplan => {}
                }
            }
            RecordBody::Replan { reason, .. } => {
                self.recovery.replan += 1;
                self.diag.annotations.push(reason.clone());
            }
            RecordBody::LateOutcome { node, .. } => {
                self.rt_mut(node)?;
                self.late_outcomes += 1;
            }
            RecordBody::RoundBoundary { round, ready } => {
                if *round != self.round + 1 {
                    return Err(ApplyError::Malformed("round_boundary"));
                }
                self.round = *round;
                self.ready_history.push(ReadySet { round: *round, members: ready.clone() });
            }
            RecordBody::PlanCommitted { plan, carried, human_timeout_ms, event } => match event {
                None => {
                    if self.last_seq != 0 || plan != &self.plan || !carried.is_empty() {
                        return Err(ApplyError::Malformed("plan_committed"));
                    }
                    self.human_timeout_ms = *human_timeout_ms;
                }
                Some(event) => self.commit_replan(plan, carried, event)?,
            },
        }
        Ok(())
    }

    fn commit_replan(&mut self, plan: &Plan, carried: &[NodeId], event: &ReplanEvent) -> Result<(), ApplyError> {
        let mut runtimes = BTreeMap::new();
        for (id, cfg) in plan.nodes() {
            let rt = if carried.contains(id) {
                let old = self.runtimes.get(id).ok_or_else(|| ApplyError::UnknownNode(id.clone()))?;
                if !is_terminal(old.state) {
                    return Err(ApplyError::Malformed("plan_committed carry-over"));
                }
                let mut rt = old.clone();
                rt.recovery_state = RecoveryState::Pristine;
                rt.patch_attempt = false;
                rt
            } else {
                NodeRuntime::new(id.clone(), cfg, self.human_timeout_ms)
            };
            runtimes.insert(id.clone(), rt);
        }
        let old = std::mem::replace(&mut self.plan, plan.clone());
        self.diag.prior_versions.push(old);
        self.runtimes = runtimes;
        self.outputs.retain(|k, _| carried.contains(k));
        self.overrides.clear();
        self.staged.clear();
        self.transitions = 0;
        self.replans.push(event.clone());
        Ok(())
    }

    /// Diagnostic context as a shareable value.
    pub(crate) fn diag_arc(&self) -> Arc<DiagContext> {
        Arc::new(self.diag.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::OutputContract;

    fn state() -> ExecutionState {
        let cfg = NodeConfig::new("noop", OutputContract::fields(&["r"]));
        let plan = Plan::new("p", 1, vec![("a".into(), cfg)], vec![], OutputContract::fields(&["r"])).unwrap();
        let commit = TraceRecord {
            seq: 1,
            clock: 0,
            plan_id: "p".into(),
            plan_version: 1,
            wall_ms: None,
            body: RecordBody::PlanCommitted { plan, carried: vec![], human_timeout_ms: 100, event: None },
        };
        ExecutionState::from_commit(&commit).unwrap()
    }

    fn rec(seq: u64, body: RecordBody) -> TraceRecord {
        TraceRecord { seq, clock: 1, plan_id: "p".into(), plan_version: 1, wall_ms: None, body }
    }

    #[test]
    fn transitions_are_verified_against_the_lifecycle() {
        let mut s = state();
        let ok = RecordBody::Transition {
            node: "a".into(),
            from: NodeState::Pending,
            to: NodeState::Ready,
            trigger: Trigger::DepsSatisfied,
        };
        s.apply(&rec(2, ok)).unwrap();
        assert_eq!(s.node_state(&"a".into()), NodeState::Ready);
        let lie = RecordBody::Transition {
            node: "a".into(),
            from: NodeState::Ready,
            to: NodeState::Executed,
            trigger: Trigger::Dispatch,
        };
        assert!(matches!(s.apply(&rec(3, lie)), Err(ApplyError::StateMismatch { .. })));
    }

    #[test]
    fn records_must_be_gapless_and_attributed() {
        let mut s = state();
        let b = RecordBody::LateOutcome { node: "a".into(), attempt: 1, outcome: OutcomeRecord::TimedOut };
        assert!(matches!(s.apply(&rec(3, b.clone())), Err(ApplyError::Sequence { .. })));
        let mut wrong = rec(2, b);
        wrong.plan_version = 2;
        assert!(matches!(s.apply(&wrong), Err(ApplyError::VersionMismatch { .. })));
    }
}
