//! Per-node state machine.
//!
//! [`TRANSITIONS`] is the complete legal relation. It is the fifteen-row node
//! transition table plus four rows the join and bounded-execution rules
//! require:
//!
//! - `running -> failed` on `exec_timeout` (elapsed time past the node timeout)
//! - `pending -> skipped` and `running -> skipped` on `sibling_completed`
//!   (sibling skip covers every non-terminal candidate state)
//! - `pending -> failed` on `join_failed` (a join that can no longer hold)
//!
//! Terminal states are absorbing. [`transition`] is pure.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::plan::{NodeConfig, NodeId};
use crate::recovery::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeState {
    Pending,
    Ready,
    Running,
    WaitingHuman,
    Blocked,
    Executed,
    FailedRetryable,
    Failed,
    Cancelled,
    Skipped,
}

impl NodeState {
    pub const ALL: [NodeState; 10] = [
        NodeState::Pending,
        NodeState::Ready,
        NodeState::Running,
        NodeState::WaitingHuman,
        NodeState::Blocked,
        NodeState::Executed,
        NodeState::FailedRetryable,
        NodeState::Failed,
        NodeState::Cancelled,
        NodeState::Skipped,
    ];

    /// Number of non-terminal states.
    pub const NON_TERMINAL: usize = 6;

    pub fn as_str(self) -> &'static str {
        match self {
            NodeState::Pending => "pending",
            NodeState::Ready => "ready",
            NodeState::Running => "running",
            NodeState::WaitingHuman => "waiting_human",
            NodeState::Blocked => "blocked",
            NodeState::Executed => "executed",
            NodeState::FailedRetryable => "failed_retryable",
            NodeState::Failed => "failed",
            NodeState::Cancelled => "cancelled",
            NodeState::Skipped => "skipped",
        }
    }
}

impl fmt::Display for NodeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

pub fn is_terminal(state: NodeState) -> bool {
    matches!(state, NodeState::Executed | NodeState::Failed | NodeState::Cancelled | NodeState::Skipped)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    DepsSatisfied,
    Dispatch,
    DepLost,
    SiblingCompleted,
    ActionSuccess,
    TransientError,
    StructuralError,
    ApprovalRequired,
    HumanApproved,
    HumanCancelled,
    HumanTimeout,
    DepResolved,
    Retry,
    BudgetExhausted,
    ExecTimeout,
    JoinFailed,
}

impl Trigger {
    pub const ALL: [Trigger; 16] = [
        Trigger::DepsSatisfied,
        Trigger::Dispatch,
        Trigger::DepLost,
        Trigger::SiblingCompleted,
        Trigger::ActionSuccess,
        Trigger::TransientError,
        Trigger::StructuralError,
        Trigger::ApprovalRequired,
        Trigger::HumanApproved,
        Trigger::HumanCancelled,
        Trigger::HumanTimeout,
        Trigger::DepResolved,
        Trigger::Retry,
        Trigger::BudgetExhausted,
        Trigger::ExecTimeout,
        Trigger::JoinFailed,
    ];
}

use NodeState as S;
use Trigger as T;

/// Every legal `(from, trigger, to)` triple.
pub const TRANSITIONS: &[(NodeState, Trigger, NodeState)] = &[
    (S::Pending, T::DepsSatisfied, S::Ready),
    (S::Ready, T::Dispatch, S::Running),
    (S::Ready, T::DepLost, S::Blocked),
    (S::Ready, T::SiblingCompleted, S::Skipped),
    (S::Running, T::ActionSuccess, S::Executed),
    (S::Running, T::TransientError, S::FailedRetryable),
    (S::Running, T::StructuralError, S::Failed),
    (S::Running, T::ApprovalRequired, S::WaitingHuman),
    (S::WaitingHuman, T::HumanApproved, S::Ready),
    (S::WaitingHuman, T::HumanCancelled, S::Cancelled),
    (S::WaitingHuman, T::HumanTimeout, S::Cancelled),
    (S::Blocked, T::DepResolved, S::Pending),
    (S::FailedRetryable, T::Retry, S::Pending),
    (S::FailedRetryable, T::SiblingCompleted, S::Skipped),
    (S::FailedRetryable, T::BudgetExhausted, S::Failed),
    (S::Running, T::ExecTimeout, S::Failed),
    (S::Pending, T::SiblingCompleted, S::Skipped),
    (S::Running, T::SiblingCompleted, S::Skipped),
    (S::Pending, T::JoinFailed, S::Failed),
];

pub fn target(from: NodeState, trigger: Trigger) -> Option<NodeState> {
    TRANSITIONS.iter().find(|(f, t, _)| *f == from && *t == trigger).map(|(_, _, to)| *to)
}

/// Escalation marker per node; only ever moves forward within a plan version.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryState {
    #[default]
    Pristine,
    Retried,
    Patched,
}

/// Mutable lifecycle record for one node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRuntime {
    pub node: NodeId,
    pub state: NodeState,
    pub retries_used: u32,
    pub retry_budget: u32,
    /// One extra retry granted by a local patch.
    pub patch_attempt: bool,
    /// Action executions started so far.
    pub attempts: u32,
    pub timeout_ms: u64,
    pub human_timeout_ms: u64,
    pub started_at: Option<Timestamp>,
    pub deadline: Option<Timestamp>,
    pub human_deadline: Option<Timestamp>,
    pub recovery_state: RecoveryState,
    /// Contract-pass stamp for the current attempt.
    pub contract_passed: bool,
    pub approved: bool,
    pub last_error: Option<Failure>,
}

impl NodeRuntime {
    pub fn new(node: NodeId, config: &NodeConfig, human_timeout_ms: u64) -> Self {
        Self {
            node,
            state: NodeState::Pending,
            retries_used: 0,
            retry_budget: config.retry_budget,
            patch_attempt: false,
            attempts: 0,
            timeout_ms: config.timeout_ms,
            human_timeout_ms,
            started_at: None,
            deadline: None,
            human_deadline: None,
            recovery_state: RecoveryState::Pristine,
            contract_passed: false,
            approved: false,
            last_error: None,
        }
    }

    pub fn retries_remaining(&self) -> u32 {
        (self.retry_budget + u32::from(self.patch_attempt)).saturating_sub(self.retries_used)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LifecycleError {
    #[error("illegal transition from {from} on {trigger:?}")]
    IllegalTransition { from: NodeState, trigger: Trigger },
    #[error("node is terminal ({state}); {trigger:?} cannot change it")]
    TerminalStateMutation { state: NodeState, trigger: Trigger },
    #[error("retry budget exhausted ({used} used of {budget})")]
    RetryBudgetExhausted { used: u32, budget: u32 },
    #[error("action_success without a passing contract report")]
    ContractGateClosed,
}

/// Applies `trigger` to `rt` at time `clock`, returning the updated runtime.
pub fn transition(rt: &NodeRuntime, trigger: Trigger, clock: Timestamp) -> Result<NodeRuntime, LifecycleError> {
    if is_terminal(rt.state) {
        return Err(LifecycleError::TerminalStateMutation { state: rt.state, trigger });
    }
    let to = target(rt.state, trigger).ok_or(LifecycleError::IllegalTransition { from: rt.state, trigger })?;
    match trigger {
        T::Retry if rt.retries_remaining() == 0 => {
            return Err(LifecycleError::RetryBudgetExhausted {
                used: rt.retries_used,
                budget: rt.retry_budget + u32::from(rt.patch_attempt),
            });
        }
        T::ActionSuccess if !rt.contract_passed => return Err(LifecycleError::ContractGateClosed),
        _ => {}
    }

    let mut next = rt.clone();
    if rt.state == S::Running {
        next.deadline = None;
    }
    if rt.state == S::WaitingHuman {
        next.human_deadline = None;
    }
    match trigger {
        T::Dispatch => {
            next.started_at = Some(clock);
            next.deadline = Some(clock + rt.timeout_ms);
            next.contract_passed = false;
        }
        T::ApprovalRequired => next.human_deadline = Some(clock + rt.human_timeout_ms),
        T::HumanApproved => next.approved = true,
        T::Retry => next.retries_used += 1,
        _ => {}
    }
    next.state = to;
    Ok(next)
}

/// The deadline trigger due at `clock`, if any. Comparison is strict.
pub fn check_deadlines(rt: &NodeRuntime, clock: Timestamp) -> Option<Trigger> {
    match rt.state {
        S::Running if rt.deadline.is_some_and(|d| clock > d) => Some(T::ExecTimeout),
        S::WaitingHuman if rt.human_deadline.is_some_and(|d| clock > d) => Some(T::HumanTimeout),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::OutputContract;

    fn rt(state: NodeState) -> NodeRuntime {
        let cfg = NodeConfig::new("noop", OutputContract::fields(&["r"])).with_timeout(100);
        let mut rt = NodeRuntime::new("n".into(), &cfg, 500);
        rt.state = state;
        rt
    }

    #[test]
    fn pending_becomes_ready() {
        let next = transition(&rt(S::Pending), T::DepsSatisfied, 0).unwrap();
        assert_eq!(next.state, S::Ready);
    }

    #[test]
    fn executed_is_absorbing() {
        assert_eq!(
            transition(&rt(S::Executed), T::Retry, 0),
            Err(LifecycleError::TerminalStateMutation { state: S::Executed, trigger: T::Retry })
        );
    }

    #[test]
    fn retry_consumes_budget() {
        let mut r = rt(S::FailedRetryable);
        r.retry_budget = 1;
        let next = transition(&r, T::Retry, 0).unwrap();
        assert_eq!((next.state, next.retries_used), (S::Pending, 1));
        let mut again = next.clone();
        again.state = S::FailedRetryable;
        assert!(matches!(transition(&again, T::Retry, 0), Err(LifecycleError::RetryBudgetExhausted { .. })));
    }

    #[test]
    fn success_needs_contract_stamp() {
        let running = transition(&rt(S::Ready), T::Dispatch, 10).unwrap();
        assert_eq!((running.started_at, running.deadline), (Some(10), Some(110)));
        assert_eq!(transition(&running, T::ActionSuccess, 20), Err(LifecycleError::ContractGateClosed));
        let mut stamped = running;
        stamped.contract_passed = true;
        let done = transition(&stamped, T::ActionSuccess, 20).unwrap();
        assert_eq!(done.state, S::Executed);
        assert_eq!(done.deadline, None);
    }

    #[test]
    fn deadline_comparison_is_strict() {
        let running = transition(&rt(S::Ready), T::Dispatch, 0).unwrap();
        assert_eq!(check_deadlines(&running, 99), None);
        assert_eq!(check_deadlines(&running, 100), None);
        assert_eq!(check_deadlines(&running, 101), Some(T::ExecTimeout));
        assert_eq!(transition(&running, T::ExecTimeout, 101).unwrap().state, S::Failed);
    }

    #[test]
    fn human_timeout_cancels() {
        let running = transition(&rt(S::Ready), T::Dispatch, 0).unwrap();
        let waiting = transition(&running, T::ApprovalRequired, 5).unwrap();
        assert_eq!(waiting.human_deadline, Some(505));
        assert_eq!(check_deadlines(&waiting, 505), None);
        assert_eq!(check_deadlines(&waiting, 506), Some(T::HumanTimeout));
        assert_eq!(transition(&waiting, T::HumanTimeout, 506).unwrap().state, S::Cancelled);
    }

    #[test]
    fn terminal_set() {
        assert!(is_terminal(S::Executed));
        assert!(is_terminal(S::Skipped));
        assert!(!is_terminal(S::Pending));
        assert_eq!(NodeState::ALL.iter().filter(|s| !is_terminal(**s)).count(), NodeState::NON_TERMINAL);
    }
}
