//! Join predicates, ready-set computation and dispatch selection.
//!
//! An `all_of` node is ready when every predecessor succeeded, where a
//! candidate skipped inside a satisfied `any_of` group counts as success. An
//! `any_of` node is ready when at least one candidate executed.

use std::collections::{BTreeMap, BTreeSet};

use crate::lifecycle::{is_terminal, NodeState};
use crate::plan::{JoinMode, NodeId, Plan, SideEffect};

use super::{ExecutionState, ReadySet};

/// Read access to node states, so join logic works on engine state and on
/// plain maps alike.
pub trait NodeStates {
    fn state_of(&self, node: &NodeId) -> NodeState;
}

impl NodeStates for BTreeMap<NodeId, NodeState> {
    fn state_of(&self, node: &NodeId) -> NodeState {
        self.get(node).copied().unwrap_or(NodeState::Pending)
    }
}

impl NodeStates for ExecutionState {
    fn state_of(&self, node: &NodeId) -> NodeState {
        self.node_state(node)
    }
}

fn group_satisfied(plan: &Plan, states: &impl NodeStates, node: &NodeId) -> bool {
    match &plan.config(node).any_of_group {
        Some(g) => plan.group_members(g).iter().any(|m| states.state_of(m) == NodeState::Executed),
        None => false,
    }
}

fn succeeded(plan: &Plan, states: &impl NodeStates, pred: &NodeId) -> bool {
    match states.state_of(pred) {
        NodeState::Executed => true,
        NodeState::Skipped => group_satisfied(plan, states, pred),
        _ => false,
    }
}

/// Whether `node`'s join condition holds.
pub fn join_holds(plan: &Plan, states: &impl NodeStates, node: &NodeId) -> bool {
    let preds = plan.predecessors(node);
    match plan.config(node).join {
        JoinMode::AllOf => preds.iter().all(|p| succeeded(plan, states, p)),
        JoinMode::AnyOf => preds.iter().any(|p| states.state_of(p) == NodeState::Executed),
    }
}

/// Whether `node`'s join can no longer hold.
pub fn join_unsatisfiable(plan: &Plan, states: &impl NodeStates, node: &NodeId) -> bool {
    let preds = plan.predecessors(node);
    match plan.config(node).join {
        JoinMode::AllOf => preds.iter().any(|p| {
            let s = states.state_of(p);
            is_terminal(s) && !succeeded(plan, states, p)
        }),
        JoinMode::AnyOf => {
            !preds.is_empty()
                && preds.iter().all(|p| is_terminal(states.state_of(p)))
                && !preds.iter().any(|p| states.state_of(p) == NodeState::Executed)
        }
    }
}

fn waiting(state: NodeState) -> bool {
    matches!(state, NodeState::Pending | NodeState::Ready)
}

/// Full recomputation over every node.
pub fn ready_members(plan: &Plan, states: &impl NodeStates) -> Vec<NodeId> {
    plan.node_ids().filter(|n| waiting(states.state_of(n)) && join_holds(plan, states, n)).cloned().collect()
}

pub fn compute_ready_set(state: &ExecutionState) -> ReadySet {
    ReadySet { round: state.round() + 1, members: ready_members(state.plan(), state) }
}

/// Nodes whose readiness may have changed because `node` became terminal.
fn affected<'a>(plan: &'a Plan, states: &impl NodeStates, node: &'a NodeId) -> Vec<&'a NodeId> {
    let mut out: Vec<&NodeId> = plan.successors(node).iter().collect();
    // An executed candidate turns its skipped siblings into successes.
    if states.state_of(node) == NodeState::Executed {
        for sib in plan.config(node).any_of_group.iter().flat_map(|g| plan.group_members(g)) {
            out.extend(plan.successors(sib));
        }
    }
    out
}

/// Updates `previous` after `newly_terminal` nodes became terminal, looking
/// only at their outgoing edges.
pub fn incremental_members(
    plan: &Plan,
    states: &impl NodeStates,
    previous: &[NodeId],
    newly_terminal: &[NodeId],
) -> Vec<NodeId> {
    let mut members: BTreeSet<NodeId> =
        previous.iter().filter(|n| waiting(states.state_of(n)) && join_holds(plan, states, n)).cloned().collect();
    for t in newly_terminal {
        for s in affected(plan, states, t) {
            if waiting(states.state_of(s)) && join_holds(plan, states, s) {
                members.insert(s.clone());
            }
        }
    }
    members.into_iter().collect()
}

pub fn update_ready_set_incremental(
    state: &ExecutionState,
    previous: &ReadySet,
    newly_terminal: &[NodeId],
) -> ReadySet {
    ReadySet {
        round: state.round() + 1,
        members: incremental_members(state.plan(), state, &previous.members, newly_terminal),
    }
}

/// Ready set maintained across a run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReadyTracker {
    members: BTreeSet<NodeId>,
}

impl ReadyTracker {
    pub fn new(plan: &Plan, states: &impl NodeStates) -> Self {
        Self { members: ready_members(plan, states).into_iter().collect() }
    }

    pub fn on_terminal(&mut self, plan: &Plan, states: &impl NodeStates, node: &NodeId) {
        for s in affected(plan, states, node) {
            if waiting(states.state_of(s)) && join_holds(plan, states, s) {
                self.members.insert(s.clone());
            }
        }
    }

    /// A node returned to pending (retry or patch).
    pub fn requeue(&mut self, plan: &Plan, states: &impl NodeStates, node: &NodeId) {
        if join_holds(plan, states, node) {
            self.members.insert(node.clone());
        }
    }

    pub fn members(&mut self, plan: &Plan, states: &impl NodeStates) -> Vec<NodeId> {
        self.members.retain(|n| plan.contains(n) && waiting(states.state_of(n)));
        self.members.iter().cloned().collect()
    }
}

/// Selects the nodes of `ready` to run this round, ascending. A high_write
/// any_of candidate waits while a sibling is running or already selected.
pub fn dispatch(state: &ExecutionState, ready: &ReadySet) -> Vec<NodeId> {
    let plan = state.plan();
    let mut chosen: Vec<NodeId> = Vec::new();
    for n in &ready.members {
        if !waiting(state.node_state(n)) || !join_holds(plan, state, n) {
            continue;
        }
        if state.config(n).side_effect == SideEffect::HighWrite {
            let busy = plan.siblings(n).iter().any(|s| {
                matches!(state.node_state(s), NodeState::Running | NodeState::WaitingHuman) || chosen.contains(s)
            });
            if busy {
                continue;
            }
        }
        chosen.push(n.clone());
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{NodeConfig, OutputContract};

    fn cfg() -> NodeConfig {
        NodeConfig::new("noop", OutputContract::fields(&["r"]))
    }

    // a -> {x, y} (group g) -> j (any_of) -> z (all_of, also fed by y)
    fn plan() -> Plan {
        let nodes = vec![
            ("a".into(), cfg()),
            ("x".into(), cfg().in_group("g")),
            ("y".into(), cfg().in_group("g")),
            ("j".into(), cfg().any_of()),
            ("z".into(), cfg()),
        ];
        let edges = [("a", "x"), ("a", "y"), ("x", "j"), ("y", "j"), ("j", "z"), ("y", "z")]
            .iter()
            .map(|(f, t)| ((*f).into(), (*t).into()))
            .collect();
        Plan::new("p", 1, nodes, edges, OutputContract::fields(&["r"])).unwrap()
    }

    fn states(pairs: &[(&str, NodeState)]) -> BTreeMap<NodeId, NodeState> {
        pairs.iter().map(|(n, s)| (NodeId::from(*n), *s)).collect()
    }

    #[test]
    fn initial_ready_set_is_the_entries() {
        assert_eq!(ready_members(&plan(), &states(&[])), vec![NodeId::from("a")]);
    }

    #[test]
    fn skipped_candidate_counts_only_when_group_satisfied() {
        use NodeState::*;
        let p = plan();
        let s = states(&[("a", Executed), ("x", Executed), ("y", Skipped), ("j", Executed)]);
        assert!(join_holds(&p, &s, &"z".into()));
        let s = states(&[("a", Executed), ("x", Failed), ("y", Skipped), ("j", Executed)]);
        assert!(!join_holds(&p, &s, &"z".into()));
        assert!(join_unsatisfiable(&p, &s, &"z".into()));
    }

    #[test]
    fn all_failed_group_makes_any_of_unsatisfiable() {
        use NodeState::*;
        let p = plan();
        assert!(join_unsatisfiable(&p, &states(&[("x", Failed), ("y", Cancelled)]), &"j".into()));
        assert!(!join_unsatisfiable(&p, &states(&[("x", Failed), ("y", Running)]), &"j".into()));
    }

    #[test]
    fn incremental_with_no_news_is_unchanged() {
        let p = plan();
        let s = states(&[]);
        let prev = ready_members(&p, &s);
        assert_eq!(incremental_members(&p, &s, &prev, &[]), prev);
    }
}
