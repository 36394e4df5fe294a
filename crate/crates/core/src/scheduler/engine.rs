//! The round-based execution engine and its replan driver.
//!
//! One round: log the ready set, promote and dispatch it, settle approvals,
//! run the dispatched actions, apply their outcomes in (completion time,
//! node id) order, then run end-of-round recovery. Every effect is a record
//! appended to the log before it is applied.

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::clock::{Clock, Timestamp, VirtualClock};
use crate::executor::{validate_contract, ExecRequest, Execution, ExecutorError, NodeExecutor, Outcome};
use crate::lifecycle::{self, is_terminal, LifecycleError, NodeState, RecoveryState, Trigger};
use crate::persistence::{OutcomeRecord, PersistError, RecordBody, RecordSink, TraceRecord};
use crate::plan::{
    derive_replan, validate_plan, NodeConfig, NodeId, Payload, Plan, PlanError, PlanStructure, PredicateRegistry,
    SideEffect, ValidationReport,
};
use crate::recovery::{
    self, ContextPartition, DiagContext, Diagnoser, ErrorKind, ExecContext, Failure, PatchSource, Reader,
    RecoveryAction, RecoveryError, RuleDiagnoser, SuffixPatcher,
};

use super::ready::{compute_ready_set, dispatch, join_holds, join_unsatisfiable, NodeStates, ReadyTracker};
use super::{ApplyError, ExecutionState, ReadySet};

/// Default time a node may wait for a human decision.
pub const DEFAULT_HUMAN_TIMEOUT_MS: u64 = 60_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryLevels {
    Retry,
    RetryPatch,
    RetryPatchReplan,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    pub human_timeout_ms: u64,
    /// Nodes at or above this side-effect level need approval before running.
    pub approval_threshold: Option<SideEffect>,
    pub recovery: RecoveryLevels,
    pub max_replans: u32,
    /// When false, failed_retryable nodes are left for explicit calls to the
    /// recovery API.
    pub auto_recovery: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            human_timeout_ms: DEFAULT_HUMAN_TIMEOUT_MS,
            approval_threshold: Some(SideEffect::HighWrite),
            recovery: RecoveryLevels::RetryPatchReplan,
            max_replans: 2,
            auto_recovery: true,
        }
    }
}

impl EngineConfig {
    pub fn with_recovery(mut self, levels: RecoveryLevels) -> Self {
        self.recovery = levels;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApprovalDecision {
    Approve,
    Cancel,
    NoResponse,
}

pub trait ApprovalHook: Send {
    fn decide(&mut self, node: &NodeId, config: &NodeConfig, timeout_ms: u64) -> ApprovalDecision;
}

impl<F> ApprovalHook for F
where
    F: FnMut(&NodeId, &NodeConfig, u64) -> ApprovalDecision + Send,
{
    fn decide(&mut self, node: &NodeId, config: &NodeConfig, timeout_ms: u64) -> ApprovalDecision {
        self(node, config, timeout_ms)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ApproveAll;

impl ApprovalHook for ApproveAll {
    fn decide(&mut self, _: &NodeId, _: &NodeConfig, _: u64) -> ApprovalDecision {
        ApprovalDecision::Approve
    }
}

/// A human who never answers.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeverRespond;

impl ApprovalHook for NeverRespond {
    fn decide(&mut self, _: &NodeId, _: &NodeConfig, _: u64) -> ApprovalDecision {
        ApprovalDecision::NoResponse
    }
}

/// Proposes the structure of the next plan version.
pub trait Replanner: Send + Sync {
    fn propose(&self, plan: &Plan, failed: &[NodeId], diag: &DiagContext) -> Option<PlanStructure>;
}

/// Replaces each failed node with a fresh copy named `<id>~v<next version>`
/// wired to the same neighbours.
#[derive(Clone, Copy, Debug, Default)]
pub struct FallbackReplanner;

impl FallbackReplanner {
    pub fn fallback_id(node: &NodeId, version: u32) -> NodeId {
        NodeId::new(format!("{node}~v{version}"))
    }
}

impl Replanner for FallbackReplanner {
    fn propose(&self, plan: &Plan, failed: &[NodeId], _diag: &DiagContext) -> Option<PlanStructure> {
        let next = plan.version() + 1;
        let rename = |n: &NodeId| if failed.contains(n) { Self::fallback_id(n, next) } else { n.clone() };
        let s = plan.structure();
        Some(PlanStructure {
            nodes: s.nodes.into_iter().map(|(id, cfg)| (rename(&id), cfg)).collect(),
            edges: s.edges.iter().map(|(a, b)| (rename(a), rename(b))).collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Succeeded,
    Failed { reason: String },
}

impl RunStatus {
    pub fn succeeded(&self) -> bool {
        matches!(self, RunStatus::Succeeded)
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("plan failed validation: {0}")]
    InvalidPlan(ValidationReport),
    #[error("{node}: {source}")]
    Lifecycle {
        node: NodeId,
        #[source]
        source: LifecycleError,
    },
    #[error("illegal transition of {node} from {from} on {trigger:?}")]
    IllegalTransition { node: NodeId, from: NodeState, trigger: Trigger },
    #[error("transition budget exceeded: {count} > {bound}")]
    TransitionBudgetExceeded { count: u64, bound: u64 },
    #[error("replan requested: {reason}")]
    ReplanRequested { reason: String, failed: Vec<NodeId> },
    #[error("no progress in round {round}")]
    Stalled { round: u64 },
    #[error("dispatch selected {0} whose join does not hold")]
    JoinViolation(NodeId),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("record rejected: {0}")]
    Apply(#[from] ApplyError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Result of a finished run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub status: RunStatus,
    pub state: ExecutionState,
    pub trace: Vec<TraceRecord>,
}

impl RunResult {
    /// Ready-set cardinality of each round, in order.
    pub fn ready_sizes(&self) -> Vec<usize> {
        self.state.ready_history().iter().map(ReadySet::len).collect()
    }

    pub fn rounds(&self) -> u64 {
        self.state.round()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundReport {
    pub round: u64,
    pub ready: Vec<NodeId>,
    pub dispatched: Vec<NodeId>,
    pub transitions: u64,
}

/// Attempt-weighted transition bound for one plan version. A node gets at
/// most `b_v + 2` attempts of four transitions each, plus one approval cycle
/// (three) and one skip or join failure; `6 * (b_v + 2)` covers that.
pub fn transition_bound(plan: &Plan) -> u64 {
    plan.nodes().values().map(|c| 6 * (u64::from(c.retry_budget) + 2)).sum()
}

/// `|V| * |non-terminal states|`.
pub fn literal_transition_bound(plan: &Plan) -> u64 {
    plan.len() as u64 * lifecycle::NodeState::NON_TERMINAL as u64
}

/// Most executions a node may get: the initial attempt, `b_v` retries and
/// one more if it was patched.
pub fn attempt_bound(retry_budget: u32, patched: bool) -> u32 {
    retry_budget + 1 + u32::from(patched)
}

pub struct EngineBuilder {
    plan: Plan,
    config: EngineConfig,
    executor: Arc<dyn NodeExecutor>,
    clock: Box<dyn Clock>,
    predicates: PredicateRegistry,
    diagnoser: Box<dyn Diagnoser>,
    patcher: Box<dyn PatchSource>,
    replanner: Option<Box<dyn Replanner>>,
    approval: Box<dyn ApprovalHook>,
    sink: Option<Box<dyn RecordSink>>,
}

impl EngineBuilder {
    pub fn config(mut self, config: EngineConfig) -> Self {
        self.config = config;
        self
    }

    pub fn clock(mut self, clock: impl Clock + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn predicates(mut self, predicates: PredicateRegistry) -> Self {
        self.predicates = predicates;
        self
    }

    pub fn diagnoser(mut self, diagnoser: impl Diagnoser + 'static) -> Self {
        self.diagnoser = Box::new(diagnoser);
        self
    }

    pub fn patcher(mut self, patcher: impl PatchSource + 'static) -> Self {
        self.patcher = Box::new(patcher);
        self
    }

    pub fn replanner(mut self, replanner: impl Replanner + 'static) -> Self {
        self.replanner = Some(Box::new(replanner));
        self
    }

    pub fn approval(mut self, hook: impl ApprovalHook + 'static) -> Self {
        self.approval = Box::new(hook);
        self
    }

    pub fn sink(mut self, sink: impl RecordSink + 'static) -> Self {
        self.sink = Some(Box::new(sink));
        self
    }

    /// Validates the plan and logs its commitment as record 1.
    pub fn build(self) -> Result<Engine, EngineError> {
        let report = validate_plan(&self.plan, &self.predicates);
        if !report.ok {
            return Err(EngineError::InvalidPlan(report));
        }
        let initial = ExecutionState::initial(self.plan.clone(), self.config.human_timeout_ms);
        let tracker = ReadyTracker::new(initial.plan(), &initial);
        let mut engine = Engine {
            state: initial,
            config: self.config,
            executor: self.executor,
            clock: self.clock,
            predicates: self.predicates,
            diagnoser: self.diagnoser,
            patcher: self.patcher,
            replanner: self.replanner,
            approval: self.approval,
            sink: self.sink,
            trace: Vec::new(),
            tracker,
        };
        let human_timeout_ms = engine.config.human_timeout_ms;
        engine.emit(RecordBody::PlanCommitted { plan: self.plan, carried: vec![], human_timeout_ms, event: None })?;
        Ok(engine)
    }
}

pub struct Engine {
    state: ExecutionState,
    config: EngineConfig,
    executor: Arc<dyn NodeExecutor>,
    clock: Box<dyn Clock>,
    predicates: PredicateRegistry,
    diagnoser: Box<dyn Diagnoser>,
    patcher: Box<dyn PatchSource>,
    replanner: Option<Box<dyn Replanner>>,
    approval: Box<dyn ApprovalHook>,
    sink: Option<Box<dyn RecordSink>>,
    trace: Vec<TraceRecord>,
    tracker: ReadyTracker,
}

enum Event {
    Finished(Outcome),
    TimedOut,
}

impl Engine {
    /// Builder with a virtual clock at 0, the rule diagnoser, suffix patches,
    /// the fallback replanner and approve-all.
    pub fn builder(plan: Plan, executor: impl NodeExecutor + 'static) -> EngineBuilder {
        EngineBuilder {
            plan,
            config: EngineConfig::default(),
            executor: Arc::new(executor),
            clock: Box::new(VirtualClock::new(0)),
            predicates: PredicateRegistry::new(),
            diagnoser: Box::new(RuleDiagnoser),
            patcher: Box::new(SuffixPatcher),
            replanner: Some(Box::new(FallbackReplanner)),
            approval: Box::new(ApproveAll),
            sink: None,
        }
    }

    pub fn state(&self) -> &ExecutionState {
        &self.state
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    fn emit(&mut self, body: RecordBody) -> Result<(), EngineError> {
        let plan_version = match &body {
            RecordBody::PlanCommitted { plan, .. } => plan.version(),
            _ => self.state.plan().version(),
        };
        let record = TraceRecord {
            seq: self.state.last_seq() + 1,
            clock: self.clock.now(),
            plan_id: self.state.plan().id().to_string(),
            plan_version,
            wall_ms: self.clock.wall_ms(),
            body,
        };
        if let Some(sink) = self.sink.as_mut() {
            sink.append(&record)?;
        }
        self.state.apply(&record)?;
        if let Some(sink) = self.sink.as_mut() {
            sink.applied(&record, &self.state)?;
        }
        self.trace.push(record);
        let bound = transition_bound(self.state.plan());
        if self.state.transitions() > bound {
            return Err(EngineError::TransitionBudgetExceeded { count: self.state.transitions(), bound });
        }
        Ok(())
    }

    /// Applies a lifecycle trigger. Returns the node's new state.
    fn fire(&mut self, node: &NodeId, trigger: Trigger) -> Result<NodeState, EngineError> {
        let rt = self.state.runtime(node).ok_or_else(|| ApplyError::UnknownNode(node.clone()))?;
        let from = rt.state;
        if lifecycle::target(from, trigger).is_none() && !is_terminal(from) {
            return Err(EngineError::IllegalTransition { node: node.clone(), from, trigger });
        }
        let next = lifecycle::transition(rt, trigger, self.clock.now())
            .map_err(|source| EngineError::Lifecycle { node: node.clone(), source })?;
        let to = next.state;
        self.emit(RecordBody::Transition { node: node.clone(), from, to, trigger })?;
        if is_terminal(to) {
            self.after_terminal(node)?;
        } else if to == NodeState::Pending {
            self.tracker.requeue(self.state.plan(), &self.state, node);
        }
        Ok(to)
    }

    /// Updates the ready tracker and fails joins that can no longer hold.
    fn after_terminal(&mut self, node: &NodeId) -> Result<(), EngineError> {
        let mut work = vec![node.clone()];
        while let Some(n) = work.pop() {
            self.tracker.on_terminal(self.state.plan(), &self.state, &n);
            let succs = self.state.plan().successors(&n).to_vec();
            for s in succs {
                if self.state.node_state(&s) == NodeState::Pending
                    && join_unsatisfiable(self.state.plan(), &self.state, &s)
                {
                    self.emit(RecordBody::Transition {
                        node: s.clone(),
                        from: NodeState::Pending,
                        to: NodeState::Failed,
                        trigger: Trigger::JoinFailed,
                    })?;
                    work.push(s);
                }
            }
        }
        Ok(())
    }

    fn exec_context(&self, node: &NodeId) -> ExecContext {
        let rt = &self.state.runtimes()[node];
        ExecContext {
            inputs: self
                .state
                .plan()
                .predecessors(node)
                .iter()
                .filter_map(|p| self.state.outputs().get(p).map(|o| (p.clone(), o.payload.clone())))
                .collect(),
            retries_remaining: rt.retries_remaining(),
            timeout_ms: rt.timeout_ms,
        }
    }

    /// Settles the approval of a node in waiting_human.
    fn settle_approval(&mut self, node: &NodeId) -> Result<NodeState, EngineError> {
        let timeout = self.state.human_timeout_ms();
        let config = self.state.config(node).clone();
        match self.approval.decide(node, &config, timeout) {
            ApprovalDecision::Approve => self.fire(node, Trigger::HumanApproved),
            ApprovalDecision::Cancel => self.fire(node, Trigger::HumanCancelled),
            ApprovalDecision::NoResponse => {
                let deadline = self.state.runtimes()[node].human_deadline.expect("waiting_human has a deadline");
                self.clock.advance_to(deadline + 1);
                let due = lifecycle::check_deadlines(&self.state.runtimes()[node], self.clock.now());
                debug_assert_eq!(due, Some(Trigger::HumanTimeout));
                self.fire(node, Trigger::HumanTimeout)
            }
        }
    }

    /// Runs one scheduling round.
    pub fn step_round(&mut self) -> Result<RoundReport, EngineError> {
        let before = self.state.total_transitions();
        let members = self.tracker.members(self.state.plan(), &self.state);
        debug_assert_eq!(members, compute_ready_set(&self.state).members, "incremental ready set diverged");
        let round = self.state.round() + 1;
        self.emit(RecordBody::RoundBoundary { round, ready: members.clone() })?;
        let ready = ReadySet { round, members: members.clone() };

        for n in &members {
            if self.state.node_state(n) == NodeState::Pending {
                self.fire(n, Trigger::DepsSatisfied)?;
            }
        }
        let selected = dispatch(&self.state, &ready);
        let mut running = Vec::new();
        for n in &selected {
            if !join_holds(self.state.plan(), &self.state, n) {
                return Err(EngineError::JoinViolation(n.clone()));
            }
            self.fire(n, Trigger::Dispatch)?;
            let needs_approval = self.config.approval_threshold.is_some_and(|t| self.state.config(n).side_effect >= t)
                && !self.state.runtimes()[n].approved;
            if needs_approval {
                self.fire(n, Trigger::ApprovalRequired)?;
                if self.settle_approval(n)? == NodeState::Ready {
                    self.fire(n, Trigger::Dispatch)?;
                }
            }
            if self.state.node_state(n) == NodeState::Running {
                running.push(n.clone());
            }
        }

        let outcomes = self.execute(&running)?;
        self.apply_events(outcomes)?;

        if self.config.auto_recovery {
            let pending_recovery: Vec<NodeId> = self
                .state
                .runtimes()
                .values()
                .filter(|rt| rt.state == NodeState::FailedRetryable)
                .map(|rt| rt.node.clone())
                .collect();
            for n in pending_recovery {
                if self.state.node_state(&n) == NodeState::FailedRetryable {
                    self.recover(&n)?;
                }
            }
        }

        Ok(RoundReport {
            round,
            ready: members,
            dispatched: running,
            transitions: self.state.total_transitions() - before,
        })
    }

    fn execute(&mut self, running: &[NodeId]) -> Result<Vec<(Timestamp, NodeId, Event, u64)>, EngineError> {
        let diag = self.state.diag_arc();
        let mut requests = Vec::with_capacity(running.len());
        for n in running {
            let attempt = self.state.runtimes()[n].attempts + 1;
            self.emit(RecordBody::Dispatch { node: n.clone(), attempt })?;
            let partition = ContextPartition::new(self.exec_context(n), Arc::clone(&diag));
            requests.push(ExecRequest {
                node: n.clone(),
                config: self.state.config(n).clone(),
                attempt,
                context: partition.view(Reader::Executor),
            });
        }
        let executor = Arc::clone(&self.executor);
        let results: Vec<Result<Execution, ExecutorError>> = requests.par_iter().map(|r| executor.execute(r)).collect();

        let mut events = Vec::with_capacity(results.len());
        for (req, result) in requests.iter().zip(results) {
            let execution = match result {
                Ok(e) => e,
                Err(ExecutorError::Context(v)) => {
                    Execution::new(Outcome::failure(ErrorKind::Structural, format!("context violation: {v}")), 0)
                }
                Err(e) => return Err(e.into()),
            };
            let rt = &self.state.runtimes()[&req.node];
            let start = rt.started_at.expect("running node has a start time");
            if execution.duration_ms > rt.timeout_ms {
                events.push((start + rt.timeout_ms + 1, req.node.clone(), Event::TimedOut, execution.duration_ms));
            } else {
                let at = start + execution.duration_ms;
                events.push((at, req.node.clone(), Event::Finished(execution.outcome), execution.duration_ms));
            }
        }
        events.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
        Ok(events)
    }

    fn apply_events(&mut self, events: Vec<(Timestamp, NodeId, Event, u64)>) -> Result<(), EngineError> {
        for (at, node, event, duration_ms) in events {
            self.clock.advance_to(at);
            let attempt = self.state.runtimes()[&node].attempts;
            let record = match &event {
                Event::TimedOut => OutcomeRecord::TimedOut,
                Event::Finished(o) => OutcomeRecord::Executed(o.clone()),
            };
            if self.state.node_state(&node) != NodeState::Running {
                self.emit(RecordBody::LateOutcome { node, attempt, outcome: record })?;
                continue;
            }
            match event {
                Event::TimedOut => {
                    self.emit(RecordBody::Outcome { node: node.clone(), attempt, duration_ms, outcome: record })?;
                    let due = lifecycle::check_deadlines(&self.state.runtimes()[&node], self.clock.now());
                    debug_assert_eq!(due, Some(Trigger::ExecTimeout));
                    self.fire(&node, Trigger::ExecTimeout)?;
                }
                Event::Finished(Outcome::Success { payload }) => {
                    self.emit(RecordBody::Outcome { node: node.clone(), attempt, duration_ms, outcome: record })?;
                    self.apply_success(&node, attempt, &payload)?;
                }
                Event::Finished(Outcome::Failure { failure } | Outcome::Retry { failure }) => {
                    let trigger = match &record {
                        OutcomeRecord::Executed(Outcome::Retry { .. }) => Trigger::TransientError,
                        _ => failure.kind.trigger(),
                    };
                    self.emit(RecordBody::Outcome { node: node.clone(), attempt, duration_ms, outcome: record })?;
                    self.fire(&node, trigger)?;
                }
                Event::Finished(Outcome::Escalate { reason }) => {
                    if self.state.runtimes()[&node].approved {
                        let failure =
                            Failure::new(ErrorKind::Structural, format!("escalated again after approval: {reason}"));
                        let outcome = OutcomeRecord::Executed(Outcome::Failure { failure });
                        self.emit(RecordBody::Outcome { node: node.clone(), attempt, duration_ms, outcome })?;
                        self.fire(&node, Trigger::StructuralError)?;
                    } else {
                        self.emit(RecordBody::Outcome { node: node.clone(), attempt, duration_ms, outcome: record })?;
                        self.fire(&node, Trigger::ApprovalRequired)?;
                        self.settle_approval(&node)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn apply_success(&mut self, node: &NodeId, attempt: u32, payload: &Payload) -> Result<(), EngineError> {
        let contract = self.state.config(node).contract.clone();
        let checks = validate_contract(payload, &contract, &self.predicates)?;
        let passed = checks.iter().all(|c| c.passed);
        self.emit(RecordBody::ContractReport { node: node.clone(), attempt, method: contract.method, checks, passed })?;
        if !passed {
            self.fire(node, Trigger::TransientError)?;
            return Ok(());
        }
        self.fire(node, Trigger::ActionSuccess)?;
        for sib in self.state.plan().siblings(node) {
            if matches!(
                self.state.node_state(&sib),
                NodeState::Pending | NodeState::Ready | NodeState::Running | NodeState::FailedRetryable
            ) {
                self.fire(&sib, Trigger::SiblingCompleted)?;
            }
        }
        Ok(())
    }

    /// End-of-round recovery policy for one failed_retryable node.
    fn recover(&mut self, node: &NodeId) -> Result<(), EngineError> {
        let rt = self.state.runtimes()[node].clone();
        let failure =
            rt.last_error.clone().unwrap_or_else(|| Failure::new(ErrorKind::Transient, "unspecified failure"));
        let partition = ContextPartition::new(ExecContext::default(), self.state.diag_arc());
        let view = partition.view(Reader::Diagnoser);
        let diagnosis = self.diagnoser.diagnose(&failure, node, rt.recovery_state, &view)?;

        if rt.recovery_state == RecoveryState::Patched {
            self.fire(node, Trigger::BudgetExhausted)?;
            return Ok(());
        }
        let remaining = rt.retries_remaining();
        if diagnosis.action == RecoveryAction::LocalRetry && remaining > 0 {
            return self.emit_all(recovery::retry_records(&self.state, node, Some(diagnosis))?, node);
        }
        let can_patch =
            self.config.recovery >= RecoveryLevels::RetryPatch && rt.recovery_state == RecoveryState::Retried;
        if can_patch {
            if let Some(cfg) = self.patcher.patch(node, self.state.config(node), &failure) {
                return self.emit_all(recovery::patch_records(&self.state, node, cfg, Some(diagnosis))?, node);
            }
        }
        if remaining > 0 {
            return self.emit_all(recovery::retry_records(&self.state, node, Some(diagnosis))?, node);
        }
        self.fire(node, Trigger::BudgetExhausted)?;
        Ok(())
    }

    fn emit_all(&mut self, records: Vec<RecordBody>, node: &NodeId) -> Result<(), EngineError> {
        for r in records {
            self.emit(r)?;
        }
        if self.state.node_state(node) == NodeState::Pending {
            self.tracker.requeue(self.state.plan(), &self.state, node);
        }
        Ok(())
    }

    /// Level 1: retries a failed_retryable node. An empty budget fails it.
    pub fn attempt_retry(&mut self, node: &NodeId) -> Result<(), EngineError> {
        match recovery::retry_records(&self.state, node, None) {
            Ok(records) => self.emit_all(records, node),
            Err(RecoveryError::BudgetExhausted(n)) => {
                self.fire(&n, Trigger::BudgetExhausted)?;
                Err(RecoveryError::BudgetExhausted(n).into())
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Level 2: replaces the node's configuration and gives it a fresh attempt.
    pub fn attempt_patch(&mut self, node: &NodeId, config: NodeConfig) -> Result<(), EngineError> {
        let records = recovery::patch_records(&self.state, node, config, None)?;
        self.emit_all(records, node)
    }

    /// Gives up on a failed_retryable node, failing it.
    pub fn abandon(&mut self, node: &NodeId) -> Result<(), EngineError> {
        let state = self.state.runtime(node).ok_or_else(|| RecoveryError::UnknownNode(node.clone()))?.state;
        if state != NodeState::FailedRetryable {
            return Err(RecoveryError::NotRecoverable { node: node.clone(), state }.into());
        }
        self.fire(node, Trigger::BudgetExhausted).map(|_| ())
    }

    /// Level 3: logs a replan request if every execution-failed node is patched.
    pub fn request_replan(&mut self, reason: &str) -> Result<Vec<NodeId>, EngineError> {
        let failed = recovery::replan_precondition(&self.state)?;
        self.emit(RecordBody::Replan { reason: reason.to_string(), failed: failed.clone() })?;
        Ok(failed)
    }

    fn replan_wanted(&self) -> bool {
        self.config.recovery == RecoveryLevels::RetryPatchReplan
            && self.replanner.is_some()
            && (self.state.replans().len() as u32) < self.config.max_replans
            && self
                .state
                .plan()
                .exit_nodes()
                .iter()
                .any(|e| matches!(self.state.node_state(e), NodeState::Failed | NodeState::Cancelled))
            && recovery::replan_precondition(&self.state).is_ok()
    }

    /// Runs the current plan version until every node is terminal.
    /// Returns `ReplanRequested` when level-3 recovery applies.
    pub fn run_version(&mut self) -> Result<RunStatus, EngineError> {
        while !self.state.all_terminal() {
            let report = self.step_round()?;
            if report.transitions == 0 {
                return Err(EngineError::Stalled { round: report.round });
            }
            if self.replan_wanted() {
                let reason = "failed nodes exhausted retry and patch".to_string();
                let failed = self.request_replan(&reason)?;
                return Err(EngineError::ReplanRequested { reason, failed });
            }
        }
        if self.replan_wanted() {
            let reason = "plan ended with failed exit".to_string();
            let failed = self.request_replan(&reason)?;
            return Err(EngineError::ReplanRequested { reason, failed });
        }
        Ok(self.status())
    }

    /// Nodes whose terminal state carries over into `next`.
    fn carry_over(&self, next: &Plan) -> Vec<NodeId> {
        let old = self.state.plan();
        let mut carried: BTreeSet<NodeId> = next
            .node_ids()
            .filter(|n| {
                old.contains(n)
                    && matches!(self.state.node_state(n), NodeState::Executed | NodeState::Skipped)
                    && old.config(n) == next.config(n)
                    && old.predecessors(n) == next.predecessors(n)
            })
            .cloned()
            .collect();
        loop {
            let keep: BTreeSet<NodeId> = carried
                .iter()
                .filter(|n| {
                    let preds_ok = next.predecessors(n).iter().all(|p| carried.contains(p));
                    let skip_ok = self.state.node_state(n) != NodeState::Skipped
                        || next
                            .siblings(n)
                            .iter()
                            .any(|s| carried.contains(s) && self.state.node_state(s) == NodeState::Executed);
                    preds_ok && skip_ok
                })
                .cloned()
                .collect();
            if keep.len() == carried.len() {
                return keep.into_iter().collect();
            }
            carried = keep;
        }
    }

    /// Derives and commits the next plan version. Returns false when the
    /// replanner has no proposal.
    pub fn commit_replan(&mut self, reason: &str, failed: &[NodeId]) -> Result<bool, EngineError> {
        let Some(replanner) = self.replanner.as_ref() else { return Ok(false) };
        let Some(proposal) = replanner.propose(self.state.plan(), failed, self.state.diag()) else {
            return Ok(false);
        };
        let (next, event) = derive_replan(self.state.plan(), proposal, reason, &self.predicates)?;
        let carried = self.carry_over(&next);
        let human_timeout_ms = self.state.human_timeout_ms();
        self.emit(RecordBody::PlanCommitted { plan: next, carried, human_timeout_ms, event: Some(event) })?;
        self.tracker = ReadyTracker::new(self.state.plan(), &self.state);
        Ok(true)
    }

    /// Success iff every exit node executed and the plan contract holds on
    /// their combined output.
    pub fn status(&self) -> RunStatus {
        let plan = self.state.plan();
        let mut combined = Payload::new();
        for e in plan.exit_nodes() {
            match self.state.outputs().get(&e) {
                Some(out) if self.state.node_state(&e) == NodeState::Executed => {
                    combined.extend(out.payload.clone());
                }
                _ => {
                    return RunStatus::Failed { reason: format!("exit node {e} is {}", self.state.node_state(&e)) };
                }
            }
        }
        match validate_contract(&combined, plan.plan_contract(), &self.predicates) {
            Ok(checks) if checks.iter().all(|c| c.passed) => RunStatus::Succeeded,
            _ => RunStatus::Failed { reason: "plan contract not satisfied".into() },
        }
    }

    /// Runs to completion, committing replans as requested.
    pub fn run(&mut self) -> Result<RunStatus, EngineError> {
        loop {
            match self.run_version() {
                Err(EngineError::ReplanRequested { reason, failed }) => {
                    if !self.commit_replan(&reason, &failed)? {
                        return Ok(self.status());
                    }
                }
                other => return other,
            }
        }
    }

    pub fn into_result(self, status: RunStatus) -> RunResult {
        RunResult { status, state: self.state, trace: self.trace }
    }
}

/// Runs `plan` with `executor` under a virtual clock and default settings.
pub fn run_to_completion(
    plan: Plan,
    executor: impl NodeExecutor + 'static,
    config: EngineConfig,
) -> Result<RunResult, EngineError> {
    let mut engine = Engine::builder(plan, executor).config(config).build()?;
    let status = engine.run()?;
    Ok(engine.into_result(status))
}

impl NodeStates for Engine {
    fn state_of(&self, node: &NodeId) -> NodeState {
        self.state.node_state(node)
    }
}
