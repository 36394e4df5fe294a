//! Structural validation run before any plan version may execute.
//!
//! Five checks, in order: acyclicity (Kahn's sort), reachability, join
//! consistency, contract well-formedness and side-effect consistency.
//! Problems are collected into a [`ValidationReport`], never raised.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{JoinMode, NodeId, OutputContract, Plan, PlanError, PredicateRegistry, SideEffect, ValidationRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Acyclicity,
    Reachability,
    JoinConsistency,
    ContractWellformed,
    SideEffectConsistency,
}

impl Check {
    pub const ALL: [Check; 5] = [
        Check::Acyclicity,
        Check::Reachability,
        Check::JoinConsistency,
        Check::ContractWellformed,
        Check::SideEffectConsistency,
    ];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    Plan,
    Node(NodeId),
    Edge(NodeId, NodeId),
    Group(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationFailure {
    pub check: Check,
    pub subject: Subject,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub failures: Vec<ValidationFailure>,
}

impl ValidationReport {
    fn from_failures(failures: Vec<ValidationFailure>) -> Self {
        Self { ok: failures.is_empty(), failures }
    }

    /// Distinct checks that produced at least one failure.
    pub fn failed_checks(&self) -> BTreeSet<Check> {
        self.failures.iter().map(|f| f.check).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return f.write_str("ok");
        }
        for (i, fail) in self.failures.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{:?}: {}", fail.check, fail.message)?;
        }
        Ok(())
    }
}

/// Runs every check against `plan`. `predicates` resolves predicate rules.
pub fn validate_plan(plan: &Plan, predicates: &PredicateRegistry) -> ValidationReport {
    let mut failures = Vec::new();
    check_acyclic(plan, &mut failures);
    check_reachable(plan, &mut failures);
    check_joins(plan, &mut failures);
    check_contracts(plan, predicates, &mut failures);
    check_side_effects(plan, &mut failures);
    ValidationReport::from_failures(failures)
}

/// Kahn's sort with the smallest id taken first among ready nodes.
pub fn topological_order(plan: &Plan) -> Result<Vec<NodeId>, PlanError> {
    let (order, leftover) = kahn(plan);
    if leftover.is_empty() {
        Ok(order)
    } else {
        Err(PlanError::CycleDetected(leftover.len()))
    }
}

fn kahn(plan: &Plan) -> (Vec<NodeId>, Vec<NodeId>) {
    let mut indegree: BTreeMap<&NodeId, usize> = plan.node_ids().map(|n| (n, plan.predecessors(n).len())).collect();
    let mut heap: BinaryHeap<Reverse<&NodeId>> =
        indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| Reverse(*n)).collect();
    let mut order = Vec::with_capacity(plan.len());
    while let Some(Reverse(n)) = heap.pop() {
        order.push(n.clone());
        for s in plan.successors(n) {
            let d = indegree.get_mut(s).expect("successor is a plan node");
            *d -= 1;
            if *d == 0 {
                heap.push(Reverse(s));
            }
        }
    }
    let leftover = indegree.into_iter().filter(|(_, d)| *d > 0).map(|(n, _)| n.clone()).collect();
    (order, leftover)
}

fn fail(out: &mut Vec<ValidationFailure>, check: Check, subject: Subject, message: String) {
    out.push(ValidationFailure { check, subject, message });
}

fn check_acyclic(plan: &Plan, out: &mut Vec<ValidationFailure>) {
    let (order, leftover) = kahn(plan);
    for n in leftover {
        fail(
            out,
            Check::Acyclicity,
            Subject::Node(n.clone()),
            format!("{n} lies on or behind a cycle (sorted {} of {} nodes)", order.len(), plan.len()),
        );
    }
}

fn bfs<'a>(starts: Vec<NodeId>, next: impl Fn(&NodeId) -> &'a [NodeId]) -> BTreeSet<NodeId> {
    let mut seen: BTreeSet<NodeId> = starts.iter().cloned().collect();
    let mut queue: VecDeque<NodeId> = starts.into();
    while let Some(n) = queue.pop_front() {
        for m in next(&n) {
            if seen.insert(m.clone()) {
                queue.push_back(m.clone());
            }
        }
    }
    seen
}

fn check_reachable(plan: &Plan, out: &mut Vec<ValidationFailure>) {
    let entries = plan.entry_nodes();
    let exits = plan.exit_nodes();
    if entries.is_empty() {
        fail(out, Check::Reachability, Subject::Plan, "plan has no entry node".into());
    }
    if exits.is_empty() {
        fail(out, Check::Reachability, Subject::Plan, "plan has no exit node".into());
    }
    let forward = bfs(entries, |n| plan.successors(n));
    let backward = bfs(exits, |n| plan.predecessors(n));
    for n in plan.node_ids() {
        if !forward.contains(n) {
            fail(
                out,
                Check::Reachability,
                Subject::Node(n.clone()),
                format!("{n} is not reachable from an entry node"),
            );
        }
        if !backward.contains(n) {
            fail(out, Check::Reachability, Subject::Node(n.clone()), format!("{n} cannot reach an exit node"));
        }
    }
}

fn check_joins(plan: &Plan, out: &mut Vec<ValidationFailure>) {
    let mut consumed: BTreeSet<&str> = BTreeSet::new();
    for (id, cfg) in plan.nodes() {
        if cfg.join != JoinMode::AnyOf {
            continue;
        }
        let preds = plan.predecessors(id);
        if preds.is_empty() {
            fail(
                out,
                Check::JoinConsistency,
                Subject::Node(id.clone()),
                format!("{id}: any_of join with no candidates"),
            );
            continue;
        }
        let groups: BTreeSet<Option<&str>> = preds.iter().map(|p| plan.config(p).any_of_group.as_deref()).collect();
        let group = match (groups.len(), groups.iter().next()) {
            (1, Some(Some(g))) => *g,
            _ => {
                fail(
                    out,
                    Check::JoinConsistency,
                    Subject::Node(id.clone()),
                    format!("{id}: any_of candidates must all belong to one group"),
                );
                continue;
            }
        };
        consumed.insert(group);
        if plan.group_members(group) != preds {
            fail(
                out,
                Check::JoinConsistency,
                Subject::Node(id.clone()),
                format!("{id}: predecessors differ from the members of group {group}"),
            );
        }
        if preds.len() < 2 {
            fail(
                out,
                Check::JoinConsistency,
                Subject::Node(id.clone()),
                format!("{id}: any_of candidate set needs at least two nodes, has {}", preds.len()),
            );
        }
    }
    for (group, members) in plan.groups() {
        if !consumed.contains(group.as_str()) {
            fail(
                out,
                Check::JoinConsistency,
                Subject::Group(group.clone()),
                format!("group {group} feeds no any_of join"),
            );
        } else if members.len() < 2 {
            fail(
                out,
                Check::JoinConsistency,
                Subject::Group(group.clone()),
                format!("group {group} has {} candidate(s); at least two required", members.len()),
            );
        }
    }
}

fn check_contract(
    subject: Subject,
    label: &str,
    contract: &OutputContract,
    predicates: &PredicateRegistry,
    out: &mut Vec<ValidationFailure>,
) {
    if contract.rules.is_empty() {
        fail(out, Check::ContractWellformed, subject.clone(), format!("{label}: contract has no validation rule"));
    }
    for rule in &contract.rules {
        if let ValidationRule::Predicate { name } = rule {
            if !predicates.contains(name) {
                fail(out, Check::ContractWellformed, subject.clone(), format!("{label}: unknown predicate {name}"));
            }
        }
    }
}

fn check_contracts(plan: &Plan, predicates: &PredicateRegistry, out: &mut Vec<ValidationFailure>) {
    for (id, cfg) in plan.nodes() {
        check_contract(Subject::Node(id.clone()), id.as_str(), &cfg.contract, predicates, out);
    }
    check_contract(Subject::Plan, "plan", plan.plan_contract(), predicates, out);
}

fn check_side_effects(plan: &Plan, out: &mut Vec<ValidationFailure>) {
    for (id, cfg) in plan.nodes() {
        if cfg.side_effect == SideEffect::HighWrite {
            if let Some(g) = &cfg.any_of_group {
                fail(
                    out,
                    Check::SideEffectConsistency,
                    Subject::Node(id.clone()),
                    format!("{id}: high_write node in any_of group {g} would be dispatched speculatively"),
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::NodeConfig;

    fn node(id: &str) -> (NodeId, NodeConfig) {
        (id.into(), NodeConfig::new("noop", OutputContract::fields(&["r"])))
    }

    fn plan(nodes: Vec<(NodeId, NodeConfig)>, edges: &[(&str, &str)]) -> Plan {
        let edges = edges.iter().map(|(a, b)| ((*a).into(), (*b).into())).collect();
        Plan::new("t", 1, nodes, edges, OutputContract::fields(&["r"])).unwrap()
    }

    #[test]
    fn two_node_chain_is_valid() {
        let p = plan(vec![node("A"), node("B")], &[("A", "B")]);
        assert!(validate_plan(&p, &PredicateRegistry::new()).ok);
    }

    #[test]
    fn two_cycle_fails_acyclicity() {
        let p = plan(vec![node("A"), node("B")], &[("A", "B"), ("B", "A")]);
        let r = validate_plan(&p, &PredicateRegistry::new());
        assert!(!r.ok);
        assert!(r.failed_checks().contains(&Check::Acyclicity));
        assert_eq!(topological_order(&p), Err(PlanError::CycleDetected(2)));
    }

    #[test]
    fn tie_break_is_by_id() {
        let p = plan(vec![node("A"), node("c"), node("b")], &[("A", "b"), ("A", "c")]);
        let order = topological_order(&p).unwrap();
        assert_eq!(order, vec![NodeId::from("A"), "b".into(), "c".into()]);
        let single = plan(vec![node("x")], &[]);
        assert_eq!(topological_order(&single).unwrap(), vec![NodeId::from("x")]);
    }

    #[test]
    fn singleton_group_fails_join_consistency() {
        let (x, cx) = node("x");
        let (y, cy) = node("y");
        let p = plan(vec![(x, cx.in_group("g")), (y, cy.any_of())], &[("x", "y")]);
        let r = validate_plan(&p, &PredicateRegistry::new());
        assert_eq!(r.failed_checks(), [Check::JoinConsistency].into());
    }

    #[test]
    fn unknown_predicate_fails_contract_check() {
        let (a, mut ca) = node("a");
        ca.contract.rules.push(ValidationRule::Predicate { name: "looks_fixed".into() });
        let p = plan(vec![(a, ca)], &[]);
        let r = validate_plan(&p, &PredicateRegistry::new());
        assert_eq!(r.failed_checks(), [Check::ContractWellformed].into());
        let mut preds = PredicateRegistry::new();
        preds.register("looks_fixed", |_| true);
        assert!(validate_plan(&p, &preds).ok);
    }
}
