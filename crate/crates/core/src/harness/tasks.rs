//! Seeded task generation by tier, with controlled fault families.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::executor::{FaultScript, ScriptedExecutor};
use crate::plan::{topological_order, NodeConfig, NodeId, OutputContract, Plan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Simple,
    Medium,
    Complex,
}

impl std::str::FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simple" => Ok(Tier::Simple),
            "medium" => Ok(Tier::Medium),
            "complex" => Ok(Tier::Complex),
            other => Err(format!("unknown tier {other}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultFamily {
    /// No faults.
    None,
    /// One node fails transiently at most `b` times.
    Transient,
    /// One node violates its contract `b + 1` times; a patch fixes it.
    ContractPatchable,
    /// One node fails on every attempt; only a new plan version helps.
    Persistent,
    /// Every candidate of one any_of group fails on every attempt.
    AlternativeFailure,
}

/// Retry budget given to every generated node.
pub const TASK_RETRY_BUDGET: u32 = 2;
/// Timeout given to every generated node.
pub const TASK_TIMEOUT_MS: u64 = 1_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub tier: Tier,
    pub family: FaultFamily,
    pub plan: Plan,
    pub faults: FaultScript,
    /// Simulated duration of each node's action.
    pub durations: BTreeMap<NodeId, u64>,
    pub seed: u64,
}

impl TaskSpec {
    /// Nodes on the longest entry-to-exit path.
    pub fn longest_path(&self) -> usize {
        longest_path(&self.plan)
    }

    pub fn executor(&self) -> ScriptedExecutor {
        self.durations
            .iter()
            .fold(ScriptedExecutor::new(self.faults.clone()), |ex, (n, ms)| ex.with_duration(n.clone(), *ms))
    }
}

/// Number of nodes on the longest path of `plan`.
pub fn longest_path(plan: &Plan) -> usize {
    let order = topological_order(plan).expect("generated plans are acyclic");
    let mut depth: BTreeMap<&NodeId, usize> = BTreeMap::new();
    for n in &order {
        let d = plan.predecessors(n).iter().map(|p| depth[p]).max().unwrap_or(0) + 1;
        depth.insert(n, d);
    }
    depth.values().copied().max().unwrap_or(0)
}

struct Block {
    entries: Vec<NodeId>,
    exits: Vec<NodeId>,
}

struct Builder {
    nodes: Vec<(NodeId, NodeConfig)>,
    edges: Vec<(NodeId, NodeId)>,
    groups: usize,
}

fn step_config() -> NodeConfig {
    NodeConfig::new("step", OutputContract::fields(&["result"]))
        .with_budget(TASK_RETRY_BUDGET)
        .with_timeout(TASK_TIMEOUT_MS)
}

impl Builder {
    fn new() -> Self {
        Self { nodes: Vec::new(), edges: Vec::new(), groups: 0 }
    }

    fn add(&mut self, config: NodeConfig) -> NodeId {
        let id = NodeId::new(format!("n{:02}", self.nodes.len()));
        self.nodes.push((id.clone(), config));
        id
    }

    fn single(&mut self) -> Block {
        let n = self.add(step_config());
        Block { entries: vec![n.clone()], exits: vec![n] }
    }

    fn chain(&mut self, len: usize) -> Block {
        let ids: Vec<NodeId> = (0..len).map(|_| self.add(step_config())).collect();
        for w in ids.windows(2) {
            self.edges.push((w[0].clone(), w[1].clone()));
        }
        Block { entries: vec![ids[0].clone()], exits: vec![ids[len - 1].clone()] }
    }

    /// Two alternative candidates feeding an any_of join.
    fn diamond(&mut self) -> Block {
        let group = format!("g{}", self.groups);
        self.groups += 1;
        let a = self.add(step_config().in_group(group.clone()));
        let b = self.add(step_config().in_group(group));
        let j = self.add(step_config().any_of());
        self.edges.push((a.clone(), j.clone()));
        self.edges.push((b.clone(), j.clone()));
        Block { entries: vec![a, b], exits: vec![j] }
    }

    fn parallel(blocks: Vec<Block>) -> Block {
        let mut out = Block { entries: Vec::new(), exits: Vec::new() };
        for b in blocks {
            out.entries.extend(b.entries);
            out.exits.extend(b.exits);
        }
        out
    }

    fn series(&mut self, a: Block, b: Block) -> Block {
        for x in &a.exits {
            for y in &b.entries {
                self.edges.push((x.clone(), y.clone()));
            }
        }
        Block { entries: a.entries, exits: b.exits }
    }

    fn finish(self, id: &str) -> Plan {
        Plan::new(id, 1, self.nodes, self.edges, OutputContract::fields(&["result"]))
            .expect("generated plan is well formed")
    }
}

fn simple_plan(id: &str, rng: &mut ChaCha8Rng) -> Plan {
    let mut b = Builder::new();
    b.chain(rng.gen_range(1..=3));
    b.finish(id)
}

fn medium_plan(id: &str, rng: &mut ChaCha8Rng) -> Plan {
    let mut b = Builder::new();
    let with_start = rng.gen_bool(0.5);
    let others = rng.gen_range(1..=2);
    let start = with_start.then(|| b.single());
    let mut branches = vec![b.diamond()];
    for i in 0..others {
        let size = 1 + usize::from(with_start) + 3 + others + 1;
        let long = i == 0 && size < 8 && rng.gen_bool(0.5);
        branches.push(if long { b.chain(2) } else { b.single() });
    }
    let middle = Builder::parallel(branches);
    let body = match start {
        Some(s) => b.series(s, middle),
        None => middle,
    };
    let end = b.single();
    b.series(body, end);
    b.finish(id)
}

fn complex_plan(id: &str, rng: &mut ChaCha8Rng) -> Plan {
    loop {
        let mut b = Builder::new();
        let mut current = b.single();
        let stages = rng.gen_range(2..=3);
        for stage in 0..stages {
            let width = rng.gen_range(2..=3);
            let mut blocks = Vec::new();
            for k in 0..width {
                let pick = if stage == 0 && k == 0 { 2 } else { rng.gen_range(0..3) };
                blocks.push(match pick {
                    0 => b.single(),
                    1 => b.chain(2),
                    _ => b.diamond(),
                });
            }
            let par = Builder::parallel(blocks);
            let joined = b.series(current, par);
            let sync = b.single();
            current = b.series(joined, sync);
        }
        let plan = b.finish(id);
        if plan.len() >= 9 {
            return plan;
        }
    }
}

/// Fork-join task: one start node, `2..=4` parallel chains, one end node.
/// No any_of groups and no faults.
pub fn parallel_plan(id: &str, rng: &mut ChaCha8Rng) -> Plan {
    let mut b = Builder::new();
    let start = b.single();
    let width = rng.gen_range(2..=4);
    let chains: Vec<Block> = (0..width)
        .map(|_| {
            let len = rng.gen_range(1..=3);
            b.chain(len)
        })
        .collect();
    let middle = Builder::parallel(chains);
    let body = b.series(start, middle);
    let end = b.single();
    b.series(body, end);
    b.finish(id)
}

fn durations(plan: &Plan, rng: &mut ChaCha8Rng) -> BTreeMap<NodeId, u64> {
    plan.node_ids().map(|n| (n.clone(), rng.gen_range(5..=50))).collect()
}

/// Failures long enough to outlast any retry budget and any loop step cap.
fn persistent_len(plan: &Plan) -> usize {
    4 * plan.len() + 8
}

fn inject(plan: &Plan, family: FaultFamily, rng: &mut ChaCha8Rng) -> (FaultFamily, FaultScript) {
    let nodes: Vec<&NodeId> = plan.node_ids().collect();
    let victim = nodes.choose(rng).expect("plans are non-empty").as_str();
    let b = TASK_RETRY_BUDGET as usize;
    match family {
        FaultFamily::None => (family, FaultScript::new()),
        FaultFamily::Transient => {
            let times = rng.gen_range(1..=b);
            (family, FaultScript::new().fail(victim, "network timeout", times))
        }
        FaultFamily::ContractPatchable => (family, FaultScript::new().fail(victim, "contract_violation", b + 1)),
        FaultFamily::Persistent => {
            (family, FaultScript::new().fail(victim, "rate limit exceeded", persistent_len(plan)))
        }
        FaultFamily::AlternativeFailure => {
            let groups: Vec<&Vec<NodeId>> = plan.groups().values().collect();
            match groups.choose(rng) {
                Some(members) => {
                    let mut script = FaultScript::new();
                    for m in members.iter() {
                        script = script.fail(m.as_str(), "connection reset", persistent_len(plan));
                    }
                    (family, script)
                }
                None => inject(plan, FaultFamily::Persistent, rng),
            }
        }
    }
}

fn pick_family(rng: &mut ChaCha8Rng) -> FaultFamily {
    match rng.gen_range(0..100) {
        0..=29 => FaultFamily::None,
        30..=49 => FaultFamily::Transient,
        50..=69 => FaultFamily::ContractPatchable,
        70..=84 => FaultFamily::Persistent,
        _ => FaultFamily::AlternativeFailure,
    }
}

/// `count` tier-conformant tasks with mixed fault families.
pub fn generate_tasks(tier: Tier, count: usize, seed: u64) -> Vec<TaskSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (tier as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    (0..count)
        .map(|i| {
            let id = format!("{tier:?}-{i:03}").to_lowercase();
            let plan = match tier {
                Tier::Simple => simple_plan(&id, &mut rng),
                Tier::Medium => medium_plan(&id, &mut rng),
                Tier::Complex => complex_plan(&id, &mut rng),
            };
            let wanted = pick_family(&mut rng);
            let (family, faults) = inject(&plan, wanted, &mut rng);
            let durations = durations(&plan, &mut rng);
            TaskSpec { id, tier, family, plan, faults, durations, seed: rng.gen() }
        })
        .collect()
}

/// `count` zero-fault fork-join tasks, reported under the medium tier.
pub fn generate_parallel_tasks(count: usize, seed: u64) -> Vec<TaskSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let id = format!("parallel-{i:03}");
            let plan = parallel_plan(&id, &mut rng);
            let durations = durations(&plan, &mut rng);
            TaskSpec {
                id,
                tier: Tier::Medium,
                family: FaultFamily::None,
                plan,
                faults: FaultScript::new(),
                durations,
                seed: rng.gen(),
            }
        })
        .collect()
}

/// Same tasks with every fault removed.
pub fn without_faults(tasks: &[TaskSpec]) -> Vec<TaskSpec> {
    tasks.iter().map(|t| TaskSpec { family: FaultFamily::None, faults: FaultScript::new(), ..t.clone() }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{validate_plan, JoinMode, PredicateRegistry};

    #[test]
    fn tiers_have_the_right_shape() {
        for t in generate_tasks(Tier::Simple, 40, 1) {
            assert!((1..=3).contains(&t.plan.len()));
            assert_eq!(t.longest_path(), t.plan.len());
            assert!(t.plan.nodes().values().all(|c| c.join == JoinMode::AllOf));
        }
        for t in generate_tasks(Tier::Medium, 40, 2) {
            assert!((4..=8).contains(&t.plan.len()), "{}", t.plan.len());
            assert!(!t.plan.groups().is_empty());
        }
        for t in generate_tasks(Tier::Complex, 40, 3) {
            assert!(t.plan.len() >= 9);
            assert!(validate_plan(&t.plan, &PredicateRegistry::new()).ok);
        }
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(generate_tasks(Tier::Medium, 5, 9), generate_tasks(Tier::Medium, 5, 9));
        assert_ne!(generate_tasks(Tier::Medium, 5, 9), generate_tasks(Tier::Medium, 5, 10));
    }
}
