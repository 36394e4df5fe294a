//! Random plans, fault scripts and independent oracles shared by the
//! integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use graph_harness::executor::ScriptOp;
use graph_harness::plan::{JoinMode, NodeConfig, NodeId, OutputContract, Plan, SideEffect};
use graph_harness::scheduler::ApprovalDecision;
use graph_harness::{FaultScript, NodeState};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn id(i: usize) -> NodeId {
    NodeId::new(format!("v{i:02}"))
}

pub fn cfg() -> NodeConfig {
    NodeConfig::new("act", OutputContract::fields(&["out"]))
}

/// Random valid DAG with up to `max_nodes` nodes. Some nodes are grouped
/// into any_of candidate sets feeding a dedicated join; some are
/// high_write.
pub fn random_plan(rng: &mut ChaCha8Rng, max_nodes: usize) -> Plan {
    let target = rng.gen_range(1..=max_nodes);
    let mut nodes: Vec<(NodeId, NodeConfig)> = Vec::new();
    let mut edges: Vec<(NodeId, NodeId)> = Vec::new();
    let mut groups = 0;
    let budget = |rng: &mut ChaCha8Rng| rng.gen_range(0..=3);
    while nodes.len() < target {
        let i = nodes.len();
        let room = target - i;
        if i > 0 && room >= 3 && rng.gen_bool(0.2) {
            let k = rng.gen_range(2..=3.min(room - 1));
            let preds: Vec<NodeId> = {
                let n = rng.gen_range(1..=2.min(i));
                let mut all: Vec<usize> = (0..i).collect();
                all.shuffle(rng);
                all[..n].iter().map(|j| id(*j)).collect()
            };
            let group = format!("g{groups}");
            groups += 1;
            let join = id(i + k);
            for c in 0..k {
                let cid = id(i + c);
                let b = budget(rng);
                nodes.push((cid.clone(), cfg().in_group(group.clone()).with_budget(b).with_timeout(100)));
                for p in &preds {
                    edges.push((p.clone(), cid.clone()));
                }
                edges.push((cid, join.clone()));
            }
            let b = budget(rng);
            nodes.push((join, cfg().any_of().with_budget(b).with_timeout(100)));
            continue;
        }
        let mut c = cfg().with_budget(budget(rng)).with_timeout(100);
        if rng.gen_bool(0.08) {
            c = c.with_side_effect(SideEffect::HighWrite);
        } else if rng.gen_bool(0.2) {
            c = c.with_side_effect(SideEffect::LowWrite);
        }
        let me = id(i);
        if i > 0 {
            let n = rng.gen_range(0..=3.min(i));
            let mut all: Vec<usize> = (0..i).collect();
            all.shuffle(rng);
            for j in &all[..n] {
                edges.push((id(*j), me.clone()));
            }
        }
        nodes.push((me, c));
    }
    Plan::new("random", 1, nodes, edges, OutputContract::fields(&["out"])).expect("random plan is well formed")
}

/// Random per-node scripts mixing successes, transient, contract and
/// structural failures, empty payloads and hangs past the timeout.
pub fn random_faults(rng: &mut ChaCha8Rng, plan: &Plan) -> FaultScript {
    let mut script = FaultScript::new();
    for n in plan.node_ids() {
        if !rng.gen_bool(0.35) {
            continue;
        }
        for _ in 0..rng.gen_range(1..=5) {
            let op = match rng.gen_range(0..10) {
                0..=3 => ScriptOp::Fail { kind: "network timeout".into() },
                4 => ScriptOp::Fail { kind: "contract_violation".into() },
                5 => ScriptOp::Fail { kind: "schema mismatch in tool call".into() },
                6 => ScriptOp::Succeed { payload: Some(Default::default()) },
                7 => ScriptOp::Hang { ms: 500 },
                8 => ScriptOp::Fail { kind: "401 unauthorized".into() },
                _ => ScriptOp::Succeed { payload: None },
            };
            script.push(n.clone(), op);
        }
    }
    script
}

/// Seeded approval decisions.
pub fn random_approval(seed: u64) -> impl FnMut(&NodeId, &NodeConfig, u64) -> ApprovalDecision + Send {
    let mut r = rng(seed);
    move |_, _, _| match r.gen_range(0..10) {
        0 => ApprovalDecision::Cancel,
        1 => ApprovalDecision::NoResponse,
        _ => ApprovalDecision::Approve,
    }
}

/// Join oracle written from the definitions, independent of the library:
/// all_of needs every predecessor executed, or skipped while a sibling in
/// its group executed; any_of needs one executed predecessor.
pub fn oracle_join(plan: &Plan, states: &BTreeMap<NodeId, NodeState>, node: &NodeId) -> bool {
    let st = |n: &NodeId| states.get(n).copied().unwrap_or(NodeState::Pending);
    let preds: Vec<&NodeId> = plan.edges().iter().filter(|(_, t)| t == node).map(|(f, _)| f).collect();
    match plan.config(node).join {
        JoinMode::AnyOf => preds.iter().any(|p| st(p) == NodeState::Executed),
        JoinMode::AllOf => preds.iter().all(|p| match st(p) {
            NodeState::Executed => true,
            NodeState::Skipped => match &plan.config(p).any_of_group {
                Some(g) => plan
                    .nodes()
                    .iter()
                    .any(|(m, c)| c.any_of_group.as_deref() == Some(g) && st(m) == NodeState::Executed),
                None => false,
            },
            _ => false,
        }),
    }
}

/// Ready set by brute force over every node.
pub fn oracle_ready(plan: &Plan, states: &BTreeMap<NodeId, NodeState>) -> BTreeSet<NodeId> {
    plan.node_ids()
        .filter(|n| {
            matches!(states.get(*n).copied().unwrap_or(NodeState::Pending), NodeState::Pending | NodeState::Ready)
                && oracle_join(plan, states, n)
        })
        .cloned()
        .collect()
}

/// Longest path in nodes, by repeated relaxation.
pub fn oracle_longest_path(plan: &Plan) -> usize {
    let mut depth: BTreeMap<&NodeId, usize> = plan.node_ids().map(|n| (n, 1)).collect();
    for _ in 0..plan.len() {
        for (a, b) in plan.edges() {
            let d = depth[a] + 1;
            if d > depth[b] {
                depth.insert(b, d);
            }
        }
    }
    depth.values().copied().max().unwrap_or(0)
}

/// Record sink whose contents stay readable after the engine takes it.
#[derive(Clone, Default)]
pub struct SharedSink(pub std::sync::Arc<std::sync::Mutex<Vec<graph_harness::TraceRecord>>>);

impl graph_harness::persistence::RecordSink for SharedSink {
    fn append(&mut self, record: &graph_harness::TraceRecord) -> Result<(), graph_harness::persistence::PersistError> {
        self.0.lock().unwrap().push(record.clone());
        Ok(())
    }
}

impl SharedSink {
    pub fn records(&self) -> Vec<graph_harness::TraceRecord> {
        self.0.lock().unwrap().clone()
    }
}
